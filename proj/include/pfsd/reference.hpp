#pragma once

#include "pfsd/losses.hpp"
#include "pfsd/tensor.hpp"

// Independent reference implementations used to cross-check the fast kernels
// and the taped losses. Everything here is a direct definitional loop over
// f64 scalars; none of it shares code with the paths it verifies.
namespace pfsd::ref {

Tensor<double> matmul(const Tensor<double>& a, const Tensor<double>& b);

Tensor<double> conv2d(const Tensor<double>& x, const Tensor<double>& w, const Tensor<double>& b,
                      int stride, int dilation, int padding);

Tensor<double> softmax_rows(const Tensor<double>& x);

// [B,C,H,W] -> [B,HW,HW]
Tensor<double> s_pfs(const Tensor<double>& f);
Tensor<double> c_pfs(const Tensor<double>& f, const Tensor<double>& w1, const Tensor<double>& b1,
                     const Tensor<double>& w2, const Tensor<double>& b2);

double pfs_loss(const Tensor<double>& m_teacher, const Tensor<double>& m_student);

Tensor<double> augment(const Tensor<double>& f, const Tensor<double>& m, double gamma);

double hard_ce(const Tensor<double>& logits, const Tensor<uint8_t>& labels, const LossConfig& cfg);

double kd_pixel_loss(const Tensor<double>& student_logits, const Tensor<double>& teacher_logits,
                     const Tensor<uint8_t>& labels, const LossConfig& cfg);

double post_softmax_loss(const Tensor<double>& student_logits,
                         const Tensor<double>& teacher_logits, const Tensor<uint8_t>& labels,
                         const LossConfig& cfg);

double hint_loss(const Tensor<double>& student_feat, const Tensor<double>& teacher_feat,
                 const Tensor<double>& adapter_w, const Tensor<double>& adapter_b);

double attention_loss(const Tensor<double>& student_feat, const Tensor<double>& teacher_feat);

}  // namespace pfsd::ref

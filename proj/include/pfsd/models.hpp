#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pfsd/losses.hpp"
#include "pfsd/nn_ops.hpp"
#include "pfsd/pfs.hpp"
#include "pfsd/tensor_io.hpp"

namespace pfsd {

enum class PfsVariant { none, s_pfs, c_pfs };

inline const char* to_string(PfsVariant v) {
    switch (v) {
        case PfsVariant::none: return "none";
        case PfsVariant::s_pfs: return "s_pfs";
        case PfsVariant::c_pfs: return "c_pfs";
    }
    return "?";
}

inline PfsVariant pfs_variant_from_string(const std::string& s) {
    if (s == "none") return PfsVariant::none;
    if (s == "s_pfs") return PfsVariant::s_pfs;
    if (s == "c_pfs") return PfsVariant::c_pfs;
    throw ConfigError("unknown pfs variant '" + s + "'");
}

// Architecture description for the toy dilated FCNs. The stem downsamples by
// its stride product; body convs keep resolution and dilate instead.
struct SegNetSpec {
    std::vector<std::pair<int, int>> stem;  // (C_out, stride), kernel 3
    std::vector<std::pair<int, int>> body;  // (C_out, dilation), kernel 3, stride 1
    PfsVariant pfs_variant = PfsVariant::none;
    int num_classes = 4;
    int in_channels = 3;

    bool operator==(const SegNetSpec&) const = default;

    int output_stride() const {
        int s = 1;
        for (const auto& [c, st] : stem) s *= st;
        return s;
    }

    int feature_channels() const {
        if (!body.empty()) return body.back().first;
        if (!stem.empty()) return stem.back().first;
        return in_channels;
    }

    void validate() const {
        if (stem.empty() && body.empty()) throw ConfigError("network needs at least one conv");
        for (const auto& [c, st] : stem)
            if (c < 1 || st < 1) throw ConfigError("stem entries need channels>=1 and stride>=1");
        for (const auto& [c, d] : body)
            if (c < 1 || d < 1) throw ConfigError("body entries need channels>=1 and dilation>=1");
        if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
        if (in_channels < 1) throw ConfigError("in_channels must be >= 1");
    }

    static SegNetSpec teacher_default() {
        SegNetSpec s;
        s.stem = {{16, 2}, {32, 2}};
        s.body = {{32, 2}, {32, 2}, {32, 4}, {32, 4}};
        s.pfs_variant = PfsVariant::c_pfs;
        s.num_classes = 4;
        return s;
    }

    static SegNetSpec student_default() {
        SegNetSpec s;
        s.stem = {{8, 2}, {16, 2}};
        s.body = {{16, 2}, {16, 4}};
        s.pfs_variant = PfsVariant::s_pfs;
        s.num_classes = 4;
        return s;
    }
};

inline void to_json(nlohmann::json& j, const SegNetSpec& s) {
    j = nlohmann::json{{"stem", s.stem},
                       {"body", s.body},
                       {"pfs", to_string(s.pfs_variant)},
                       {"num_classes", s.num_classes},
                       {"in_channels", s.in_channels}};
}

inline void from_json(const nlohmann::json& j, SegNetSpec& s) {
    for (const auto& [key, _] : j.items()) {
        if (key != "stem" && key != "body" && key != "pfs" && key != "num_classes" &&
            key != "in_channels")
            throw ConfigError("unknown key '" + key + "' in network spec");
    }
    j.at("stem").get_to(s.stem);
    j.at("body").get_to(s.body);
    s.pfs_variant = pfs_variant_from_string(j.at("pfs").get<std::string>());
    j.at("num_classes").get_to(s.num_classes);
    s.in_channels = j.value("in_channels", 3);
}

template <std::floating_point T>
struct NamedParam {
    std::string name;
    Tensor<T>* tensor;
    bool decay;  // weight decay applies; off for biases and gamma
};

template <std::floating_point T>
struct ForwardResult {
    Var<T> logits;                 // [B,c,H,W], input resolution
    Var<T> feat;                   // pre-augmentation body output
    std::optional<PfsMap<T>> pfs;  // present unless the variant is none
    std::vector<Var<T>> param_vars;  // aligned with Network::params()
};

template <std::floating_point T>
class Network {
public:
    Network() = default;

    static Network build(const SegNetSpec& spec, uint64_t seed) {
        spec.validate();
        Network net;
        net.spec_ = spec;
        Rng rng(seed);
        int c_in = spec.in_channels;
        for (const auto& [c_out, stride] : spec.stem) {
            net.stem_.emplace_back(c_out, c_in, 3, stride, 1);
            init_params(net.stem_.back(), rng);
            c_in = c_out;
        }
        for (const auto& [c_out, dilation] : spec.body) {
            net.body_.emplace_back(c_out, c_in, 3, 1, dilation);
            init_params(net.body_.back(), rng);
            c_in = c_out;
        }
        if (spec.pfs_variant == PfsVariant::c_pfs) {
            net.cpfs_.emplace(c_in);
            net.cpfs_->init(rng);
        }
        if (spec.pfs_variant != PfsVariant::none) net.gamma_ = Tensor<T>::scalar(T(0));
        net.classifier_ = Conv2dLayer<T>(spec.num_classes, c_in, 1);
        init_params(net.classifier_, rng);
        return net;
    }

    const SegNetSpec& spec() const { return spec_; }

    std::vector<NamedParam<T>> params() {
        std::vector<NamedParam<T>> out;
        auto push = [&](const std::string& name, Conv2dLayer<T>& l) {
            out.push_back({name + ".weight", &l.weight, true});
            out.push_back({name + ".bias", &l.bias, false});
        };
        for (size_t i = 0; i < stem_.size(); ++i) push("stem." + std::to_string(i), stem_[i]);
        for (size_t i = 0; i < body_.size(); ++i) push("body." + std::to_string(i), body_[i]);
        if (cpfs_) {
            push("pfs.w1", cpfs_->w1);
            push("pfs.w2", cpfs_->w2);
        }
        if (spec_.pfs_variant != PfsVariant::none) out.push_back({"pfs.gamma", &gamma_, false});
        push("classifier", classifier_);
        return out;
    }

    size_t param_count() {
        size_t n = 0;
        for (const auto& p : params()) n += p.tensor->numel();
        return n;
    }

    ForwardResult<T> forward(Tape<T>& tape, const Tensor<T>& images, bool with_grad) {
        if (images.rank() != 4 || static_cast<int>(images.dim(1)) != spec_.in_channels)
            throw ShapeError("forward expects images [B," + std::to_string(spec_.in_channels) +
                             ",H,W], got " + shape_str(images.shape()));
        const size_t h = images.dim(2), w = images.dim(3);
        const int os = spec_.output_stride();
        if (h % static_cast<size_t>(os) != 0 || w % static_cast<size_t>(os) != 0)
            throw ShapeError("input " + std::to_string(h) + "x" + std::to_string(w) +
                             " not divisible by output stride " + std::to_string(os));

        ForwardResult<T> out{};
        std::vector<Var<T>> pv;
        for (auto& p : params()) pv.push_back(tape.leaf(*p.tensor, with_grad));

        size_t next = 0;
        auto take2 = [&]() {
            Var<T> a = pv[next], b = pv[next + 1];
            next += 2;
            return std::pair<Var<T>, Var<T>>(a, b);
        };

        Var<T> x = tape.constant(images);
        for (auto& layer : stem_) {
            auto [wv, bv] = take2();
            x = relu(conv2d(x, wv, bv, layer));
        }
        for (auto& layer : body_) {
            auto [wv, bv] = take2();
            x = relu(conv2d(x, wv, bv, layer));
        }
        out.feat = x;

        Var<T> head_in = x;
        if (spec_.pfs_variant == PfsVariant::s_pfs) {
            PfsMap<T> m = s_pfs(x);
            Var<T> gamma = pv[next++];
            head_in = augment(x, m, gamma);
            out.pfs = std::move(m);
        } else if (spec_.pfs_variant == PfsVariant::c_pfs) {
            auto [w1w, w1b] = take2();
            auto [w2w, w2b] = take2();
            PfsMap<T> m = c_pfs(x, w1w, w1b, w2w, w2b, *cpfs_);
            Var<T> gamma = pv[next++];
            head_in = augment(x, m, gamma);
            out.pfs = std::move(m);
        }

        auto [cw, cb] = take2();
        Var<T> logits = conv2d(head_in, cw, cb, classifier_);
        out.logits = upsample_bilinear(logits, h, w);
        out.param_vars = std::move(pv);
        return out;
    }

    Conv2dLayer<T>& stem_layer(size_t i) { return stem_.at(i); }
    Conv2dLayer<T>& body_layer(size_t i) { return body_.at(i); }
    Conv2dLayer<T>& classifier_layer() { return classifier_; }
    Tensor<T>& gamma() { return gamma_; }

private:
    SegNetSpec spec_;
    std::vector<Conv2dLayer<T>> stem_;
    std::vector<Conv2dLayer<T>> body_;
    std::optional<CPfsTransforms<T>> cpfs_;
    Tensor<T> gamma_;
    Conv2dLayer<T> classifier_;
};

// ---------------------------------------------------------------------------
// Checkpoints. Layout, little-endian:
//   magic "PFCK" | version u8 (1) | count u32
//   | count x (name_len u16, name bytes, tensor in PFST layout)
//   | metadata_len u32 | metadata JSON (the network spec)
inline constexpr char kCheckpointMagic[4] = {'P', 'F', 'C', 'K'};
inline constexpr uint8_t kCheckpointVersion = 1;

template <std::floating_point T>
void save_checkpoint(Network<T>& net, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for write: " + path);
    auto params = net.params();
    os.write(kCheckpointMagic, 4);
    os.put(static_cast<char>(kCheckpointVersion));
    detail::put_u32_le(os, static_cast<uint32_t>(params.size()));
    for (const auto& p : params) {
        if (p.name.size() > 0xffff) throw Error("parameter name too long");
        detail::put_u16_le(os, static_cast<uint16_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_tensor(os, *p.tensor, path);
    }
    const std::string meta = nlohmann::json(net.spec()).dump();
    detail::put_u32_le(os, static_cast<uint32_t>(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    os.flush();
    if (!os) throw IoError("write failed: " + path);
}

namespace detail {

// Reads a tensor of whatever float dtype the file holds and converts to T.
template <std::floating_point T>
Tensor<T> read_param_as(std::istream& is, const std::string& where) {
    const auto pos = is.tellg();
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated checkpoint: " + where);
    is.get();
    const int code = is.get();
    if (!is) throw FormatError("truncated checkpoint: " + where);
    is.seekg(pos);
    if (code == dtype_traits<float>::code) return cast<T>(read_tensor<float>(is, where));
    if (code == dtype_traits<double>::code) return cast<T>(read_tensor<double>(is, where));
    throw FormatError("unsupported parameter dtype code " + std::to_string(code) + " in " + where);
}

}  // namespace detail

template <std::floating_point T>
Network<T> load_checkpoint(const std::string& path,
                           const SegNetSpec* expected_spec = nullptr) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open for read: " + path);
    char magic[4];
    if (!is.read(magic, 4)) throw FormatError("truncated checkpoint: " + path);
    if (std::memcmp(magic, kCheckpointMagic, 4) != 0)
        throw FormatError("bad magic in " + path + " (expected PFCK)");
    const int version = is.get();
    if (version != kCheckpointVersion)
        throw FormatError("unsupported checkpoint version " + std::to_string(version) + " in " +
                          path);
    const uint32_t count = detail::get_u32_le(is, path);
    std::map<std::string, Tensor<T>> entries;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = detail::get_u16_le(is, path);
        std::string name(len, '\0');
        if (!is.read(name.data(), len)) throw FormatError("truncated checkpoint: " + path);
        Tensor<T> t = detail::read_param_as<T>(is, path);
        if (!entries.emplace(name, std::move(t)).second)
            throw FormatError("duplicate parameter name '" + name + "' in " + path);
    }
    const uint32_t meta_len = detail::get_u32_le(is, path);
    std::string meta(meta_len, '\0');
    if (!is.read(meta.data(), meta_len)) throw FormatError("truncated checkpoint: " + path);

    SegNetSpec spec;
    try {
        spec = nlohmann::json::parse(meta).get<SegNetSpec>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError("bad checkpoint metadata in " + path + ": " + e.what());
    }
    if (expected_spec && !(*expected_spec == spec))
        throw FormatError("checkpoint spec mismatch: " + path + " holds a different architecture");

    Network<T> net = Network<T>::build(spec, 0);
    for (auto& p : net.params()) {
        auto it = entries.find(p.name);
        if (it == entries.end())
            throw FormatError("checkpoint " + path + " is missing parameter '" + p.name + "'");
        if (it->second.shape() != p.tensor->shape())
            throw FormatError("checkpoint " + path + " has wrong shape for '" + p.name + "'");
        *p.tensor = std::move(it->second);
        entries.erase(it);
    }
    if (!entries.empty())
        throw FormatError("checkpoint " + path + " has unexpected parameter '" +
                          entries.begin()->first + "'");
    return net;
}

// FNV-1a over parameter names and raw bytes, in declaration order.
template <std::floating_point T>
uint64_t param_hash(Network<T>& net) {
    uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* data, size_t n) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 0x100000001b3ULL;
        }
    };
    for (const auto& p : net.params()) {
        mix(p.name.data(), p.name.size());
        mix(p.tensor->data(), p.tensor->numel() * sizeof(T));
    }
    return h;
}

}  // namespace pfsd

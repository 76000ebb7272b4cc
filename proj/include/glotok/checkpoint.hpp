#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "glotok/binary_io.hpp"
#include "glotok/config.hpp"
#include "glotok/error.hpp"
#include "glotok/trainer.hpp"

namespace glotok {

// GTCK layout: "GTCK", u32 version, u32 section count, then per section a
// length-prefixed tag, u64 payload size and the payload. Sections:
//   config  - TrainConfig as JSON text
//   params  - named float32 tensors (u32 count; name, u32 rank, u32 dims, data)
//   adam_m, adam_v - optimizer moments, same layout as params
//   state   - u64 steps done, u64 adam t, length-prefixed RNG state text
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <class T>
std::vector<std::uint8_t> encode_tensors(const std::vector<std::string>& names, const std::vector<const Tensor<T>*>& ts) {
    io::ByteWriter w;
    w.put<std::uint32_t>(static_cast<std::uint32_t>(ts.size()));
    for (std::size_t i = 0; i < ts.size(); ++i) {
        w.put_string(names[i]);
        w.put<std::uint32_t>(static_cast<std::uint32_t>(ts[i]->rank()));
        for (const auto d : ts[i]->shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
        for (const T v : ts[i]->vec()) w.put<float>(static_cast<float>(v));
    }
    return w.bytes();
}

struct NamedTensor {
    std::string name;
    Tensor<float> value;
};

inline std::vector<NamedTensor> decode_tensors(io::ByteReader& r) {
    const auto n = r.get<std::uint32_t>("tensor count");
    std::vector<NamedTensor> out;
    for (std::uint32_t i = 0; i < n; ++i) {
        NamedTensor t;
        t.name = r.get_string("tensor name");
        const auto rank = r.get<std::uint32_t>("tensor rank");
        Shape s;
        for (std::uint32_t k = 0; k < rank; ++k) s.push_back(r.get<std::uint32_t>("tensor dim"));
        t.value = Tensor<float>(s, r.get_array<float>(shape_numel(s), "tensor data"));
        out.push_back(std::move(t));
    }
    return out;
}

} // namespace detail

struct CheckpointData {
    TrainConfig config;
    std::vector<detail::NamedTensor> params, adam_m, adam_v;
    std::uint64_t steps_done = 0;
    std::uint64_t adam_t = 0;
    std::string rng_state;
};

template <class T>
std::vector<std::uint8_t> encode_checkpoint(const Trainer<T>& tr) {
    auto& mut = const_cast<Trainer<T>&>(tr);
    const auto ps = mut.model().params();
    std::vector<std::string> names;
    std::vector<const Tensor<T>*> vals, ms, vs;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        names.push_back(ps[i]->name);
        vals.push_back(&ps[i]->value);
        ms.push_back(&tr.adam().m[i]);
        vs.push_back(&tr.adam().v[i]);
    }
    std::ostringstream rng;
    rng << tr.rng();

    io::ByteWriter st;
    st.put<std::uint64_t>(tr.steps_done());
    st.put<std::uint64_t>(tr.adam().t);
    st.put_string(rng.str());

    const std::string cfg = nlohmann::json(tr.config()).dump();
    const std::vector<std::uint8_t> cfg_bytes(cfg.begin(), cfg.end());

    io::ByteWriter w;
    w.magic("GTCK");
    w.put<std::uint32_t>(kCheckpointVersion);
    w.put<std::uint32_t>(5);
    auto section = [&](const char* tag, const std::vector<std::uint8_t>& payload) {
        w.put_string(tag);
        w.put<std::uint64_t>(payload.size());
        w.put_bytes(payload);
    };
    section("config", cfg_bytes);
    section("params", detail::encode_tensors(names, vals));
    section("adam_m", detail::encode_tensors(names, ms));
    section("adam_v", detail::encode_tensors(names, vs));
    section("state", st.bytes());
    return w.bytes();
}

template <class T>
void save_checkpoint(const Trainer<T>& tr, const std::filesystem::path& path) {
    io::ByteWriter w;
    w.put_bytes(encode_checkpoint(tr));
    w.save(path);
}

inline CheckpointData read_checkpoint(const std::filesystem::path& path) {
    auto r = io::ByteReader::from_file(path);
    r.expect_magic("GTCK");
    const auto version = r.get<std::uint32_t>("version");
    if (version != kCheckpointVersion)
        throw FormatError(r.label() + ": checkpoint version " + std::to_string(version) + " is not supported (expected " +
                          std::to_string(kCheckpointVersion) + ")");
    const auto count = r.get<std::uint32_t>("section count");
    CheckpointData ck;
    bool have_cfg = false, have_params = false, have_state = false;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::string tag = r.get_string("section tag");
        const auto len = r.get<std::uint64_t>("section size");
        io::ByteReader sec(r.get_array<std::uint8_t>(len, "section payload"), r.label() + ":" + tag);
        if (tag == "config") {
            const auto bytes = sec.get_array<char>(len, "config");
            try {
                ck.config = nlohmann::json::parse(std::string(bytes.begin(), bytes.end())).get<TrainConfig>();
            } catch (const nlohmann::json::exception& e) {
                throw FormatError(r.label() + ": corrupt config section: " + e.what());
            }
            have_cfg = true;
        } else if (tag == "params") {
            ck.params = detail::decode_tensors(sec);
            have_params = true;
        } else if (tag == "adam_m") {
            ck.adam_m = detail::decode_tensors(sec);
        } else if (tag == "adam_v") {
            ck.adam_v = detail::decode_tensors(sec);
        } else if (tag == "state") {
            ck.steps_done = sec.get<std::uint64_t>("steps");
            ck.adam_t = sec.get<std::uint64_t>("adam t");
            ck.rng_state = sec.get_string("rng state");
            have_state = true;
        } else {
            continue;  // unknown sections are skipped
        }
        sec.expect_end();
    }
    r.expect_end();
    if (!have_cfg || !have_params || !have_state) throw FormatError(r.label() + ": checkpoint is missing required sections");
    return ck;
}

namespace detail {
template <class T>
void copy_tensors(const std::vector<NamedTensor>& src, const std::vector<nn::Param<T>*>& ps, const std::vector<Tensor<T>*>& dst,
                  const char* what) {
    if (src.size() != dst.size())
        throw FormatError(std::string("checkpoint ") + what + ": expected " + std::to_string(dst.size()) + " tensors, found " +
                          std::to_string(src.size()));
    for (std::size_t i = 0; i < dst.size(); ++i) {
        if (src[i].name != ps[i]->name || src[i].value.shape() != dst[i]->shape())
            throw FormatError(std::string("checkpoint ") + what + ": tensor '" + src[i].name + "' does not match model tensor '" +
                              ps[i]->name + "'");
        for (std::size_t k = 0; k < dst[i]->size(); ++k) (*dst[i])[k] = static_cast<T>(src[i].value[k]);
    }
}
} // namespace detail

template <class T>
void apply_params(const CheckpointData& ck, TokenizerModel<T>& model) {
    const auto ps = model.params();
    std::vector<Tensor<T>*> dst;
    for (auto* p : ps) dst.push_back(&p->value);
    detail::copy_tensors(ck.params, ps, dst, "params");
}

template <class T>
void apply_checkpoint(const CheckpointData& ck, Trainer<T>& tr) {
    apply_params(ck, tr.model());
    const auto ps = tr.model().params();
    std::vector<Tensor<T>*> m, v;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        m.push_back(&tr.adam().m[i]);
        v.push_back(&tr.adam().v[i]);
    }
    if (!ck.adam_m.empty()) detail::copy_tensors(ck.adam_m, ps, m, "adam_m");
    if (!ck.adam_v.empty()) detail::copy_tensors(ck.adam_v, ps, v, "adam_v");
    tr.adam().t = ck.adam_t;
    std::istringstream in(ck.rng_state);
    in >> tr.rng();
    if (!in) throw FormatError("checkpoint: corrupt RNG state");
    tr.set_steps_done(ck.steps_done);
}

// Parameters only, for inference; no teacher or optimizer state needed.
template <class T = float>
TokenizerModel<T> load_model(const std::filesystem::path& path) {
    const auto ck = read_checkpoint(path);
    TokenizerModel<T> model(ck.config);
    apply_params(ck, model);
    return model;
}

template <class T = float>
Trainer<T> load_checkpoint(const std::filesystem::path& path, std::optional<TeacherDistribution> teacher) {
    const auto ck = read_checkpoint(path);
    Trainer<T> tr(ck.config, std::move(teacher));
    apply_checkpoint(ck, tr);
    return tr;
}

} // namespace glotok

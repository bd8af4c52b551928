// Checkpoint file format: magic "M2SPE1", then a little-endian u32 count of
// named arrays, then per array: u32 name length, UTF-8 name, u32 rank, u32
// dims, and the values as little-endian 64-bit floats. The encoder
// configuration rides along as a rank-1 array named "config" so a
// checkpoint is self-describing.
#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "encoder.hpp"
#include "matrix.hpp"

namespace m2spe {

namespace detail {

inline void put_u32_le(std::string& out, uint32_t v) {
    for (int b = 0; b < 4; ++b) out.push_back(static_cast<char>((v >> (8 * b)) & 0xff));
}

inline void put_f64_le(std::string& out, double d) {
    uint64_t bits;
    std::memcpy(&bits, &d, sizeof bits);
    for (int b = 0; b < 8; ++b) out.push_back(static_cast<char>((bits >> (8 * b)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw std::runtime_error("checkpoint: truncated file");
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int b = 0; b < 4; ++b) v |= static_cast<uint32_t>(static_cast<unsigned char>(buf[pos++])) << (8 * b);
        return v;
    }
    double f64() {
        need(8);
        uint64_t v = 0;
        for (int b = 0; b < 8; ++b) v |= static_cast<uint64_t>(static_cast<unsigned char>(buf[pos++])) << (8 * b);
        double d;
        std::memcpy(&d, &v, sizeof d);
        return d;
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

inline std::vector<double> config_to_values(const EncoderConfig& cfg) {
    std::vector<double> v{static_cast<double>(cfg.num_layers),
                          static_cast<double>(cfg.num_heads),
                          static_cast<double>(cfg.hidden_dim),
                          static_cast<double>(cfg.ff_dim),
                          static_cast<double>(cfg.num_cls),
                          static_cast<double>(cfg.vocab_size),
                          static_cast<double>(cfg.max_seq_len),
                          cfg.lambda,
                          cfg.reparam_enabled ? 1.0 : 0.0,
                          cfg.injections_enabled ? 1.0 : 0.0,
                          static_cast<double>(cfg.injection_layers.size())};
    for (int l : cfg.injection_layers) v.push_back(static_cast<double>(l));
    return v;
}

inline EncoderConfig config_from_values(const std::vector<double>& v) {
    if (v.size() < 11) throw std::runtime_error("checkpoint: malformed config array");
    EncoderConfig cfg;
    cfg.num_layers = static_cast<int>(v[0]);
    cfg.num_heads = static_cast<int>(v[1]);
    cfg.hidden_dim = static_cast<int>(v[2]);
    cfg.ff_dim = static_cast<int>(v[3]);
    cfg.num_cls = static_cast<int>(v[4]);
    cfg.vocab_size = static_cast<int>(v[5]);
    cfg.max_seq_len = static_cast<int>(v[6]);
    cfg.lambda = v[7];
    cfg.reparam_enabled = v[8] != 0.0;
    cfg.injections_enabled = v[9] != 0.0;
    const size_t n_inj = static_cast<size_t>(v[10]);
    if (v.size() != 11 + n_inj) throw std::runtime_error("checkpoint: malformed config array");
    cfg.injection_layers.clear();
    for (size_t i = 0; i < n_inj; ++i) cfg.injection_layers.push_back(static_cast<int>(v[11 + i]));
    cfg.validate();
    return cfg;
}

}  // namespace detail

inline constexpr char kCheckpointMagic[] = "M2SPE1";

inline void save_checkpoint(const std::string& path, const EncoderConfig& cfg, EncoderParams& params) {
    std::vector<std::pair<std::string, const Matrix*>> arrays;
    params.for_each_array(cfg, [&](const std::string& name, Matrix& m) { arrays.push_back({name, &m}); });

    std::string out;
    out.append(kCheckpointMagic, 6);
    detail::put_u32_le(out, static_cast<uint32_t>(arrays.size() + 1));

    const std::vector<double> cfg_values = detail::config_to_values(cfg);
    detail::put_u32_le(out, 6);
    out.append("config");
    detail::put_u32_le(out, 1);
    detail::put_u32_le(out, static_cast<uint32_t>(cfg_values.size()));
    for (double d : cfg_values) detail::put_f64_le(out, d);

    for (const auto& [name, m] : arrays) {
        detail::put_u32_le(out, static_cast<uint32_t>(name.size()));
        out.append(name);
        detail::put_u32_le(out, 2);
        detail::put_u32_le(out, static_cast<uint32_t>(m->rows));
        detail::put_u32_le(out, static_cast<uint32_t>(m->cols));
        for (double d : m->data) detail::put_f64_le(out, d);
    }

    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    if (!f) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline std::pair<EncoderConfig, EncoderParams> load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    detail::ByteReader r{buf};
    if (r.bytes(6) != std::string(kCheckpointMagic, 6)) throw std::runtime_error("load_checkpoint: bad magic");
    const uint32_t count = r.u32();

    std::vector<std::pair<std::string, std::vector<double>>> named;
    std::vector<std::pair<uint32_t, uint32_t>> shapes;
    for (uint32_t i = 0; i < count; ++i) {
        const std::string name = r.bytes(r.u32());
        const uint32_t rank = r.u32();
        if (rank != 1 && rank != 2) throw std::runtime_error("load_checkpoint: unsupported rank");
        uint64_t numel = 1;
        uint32_t rows = 1, cols = 1;
        for (uint32_t d = 0; d < rank; ++d) {
            const uint32_t dim = r.u32();
            numel *= dim;
            (d == 0 ? (rank == 2 ? rows : cols) : cols) = dim;
        }
        std::vector<double> values(numel);
        for (double& v : values) v = r.f64();
        named.push_back({name, std::move(values)});
        shapes.push_back({rows, cols});
    }
    if (r.pos != buf.size()) throw std::runtime_error("load_checkpoint: trailing bytes");
    if (named.empty() || named[0].first != "config") throw std::runtime_error("load_checkpoint: missing config array");

    const EncoderConfig cfg = detail::config_from_values(named[0].second);
    EncoderParams params = init_encoder(cfg, 0);  // shapes only; every array is overwritten below

    size_t idx = 1;
    params.for_each_array(cfg, [&](const std::string& name, Matrix& m) {
        if (idx >= named.size() || named[idx].first != name)
            throw std::runtime_error("load_checkpoint: expected array " + name);
        const auto& [rows, cols] = shapes[idx];
        if (static_cast<int>(rows) != m.rows || static_cast<int>(cols) != m.cols)
            throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
        m.data = named[idx].second;
        ++idx;
    });
    if (idx != named.size()) throw std::runtime_error("load_checkpoint: unexpected extra arrays");
    return {cfg, std::move(params)};
}

}  // namespace m2spe

#include <catch_amalgamated.hpp>

#include <filesystem>
#include <fstream>

#include "m2spe/checkpoint.hpp"
#include "m2spe/encoder.hpp"

using namespace m2spe;

namespace {

EncoderConfig cfg_for_test() {
    EncoderConfig cfg;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.hidden_dim = 8;
    cfg.ff_dim = 12;
    cfg.num_cls = 2;
    cfg.injection_layers = {1, 2};
    cfg.vocab_size = 16;
    cfg.max_seq_len = 6;
    cfg.lambda = 0.25;
    return cfg;
}

uint32_t u32_at(const std::string& b, size_t off) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<unsigned char>(b[off + static_cast<size_t>(i)])) << (8 * i);
    return v;
}

}  // namespace

TEST_CASE("checkpoint round trip is bit exact") {
    const EncoderConfig cfg = cfg_for_test();
    EncoderParams params = init_encoder(cfg, 31);
    const std::string path = (std::filesystem::temp_directory_path() / "m2spe_ckpt_test.bin").string();
    save_checkpoint(path, cfg, params);

    auto [loaded_cfg, loaded] = load_checkpoint(path);
    REQUIRE(loaded_cfg.num_layers == cfg.num_layers);
    REQUIRE(loaded_cfg.num_cls == cfg.num_cls);
    REQUIRE(loaded_cfg.lambda == cfg.lambda);
    REQUIRE(loaded_cfg.injection_layers == cfg.injection_layers);
    REQUIRE(loaded_cfg.reparam_enabled == cfg.reparam_enabled);

    std::vector<Matrix*> a, b;
    params.for_each_array(cfg, [&](const std::string&, Matrix& m) { a.push_back(&m); });
    loaded.for_each_array(loaded_cfg, [&](const std::string&, Matrix& m) { b.push_back(&m); });
    REQUIRE(a.size() == b.size());
    for (size_t i = 0; i < a.size(); ++i) REQUIRE(a[i]->data == b[i]->data);
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint byte layout") {
    const EncoderConfig cfg = cfg_for_test();
    EncoderParams params = init_encoder(cfg, 1);
    const std::string path = (std::filesystem::temp_directory_path() / "m2spe_ckpt_layout.bin").string();
    save_checkpoint(path, cfg, params);

    std::ifstream in(path, std::ios::binary);
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    REQUIRE(bytes.substr(0, 6) == "M2SPE1");

    size_t expected_arrays = 1;  // config
    params.for_each_array(cfg, [&](const std::string&, Matrix&) { ++expected_arrays; });
    REQUIRE(u32_at(bytes, 6) == expected_arrays);

    // first array: "config", rank 1
    REQUIRE(u32_at(bytes, 10) == 6);
    REQUIRE(bytes.substr(14, 6) == "config");
    REQUIRE(u32_at(bytes, 20) == 1);
    const uint32_t cfg_len = u32_at(bytes, 24);
    REQUIRE(cfg_len == 11 + cfg.injection_layers.size());

    // second array follows immediately after the config values
    const size_t second = 28 + 8 * static_cast<size_t>(cfg_len);
    REQUIRE(u32_at(bytes, second) == std::string("token_embedding").size());
    REQUIRE(bytes.substr(second + 4, 15) == "token_embedding");
    REQUIRE(u32_at(bytes, second + 19) == 2);                               // rank
    REQUIRE(u32_at(bytes, second + 23) == static_cast<uint32_t>(cfg.vocab_size));
    REQUIRE(u32_at(bytes, second + 27) == static_cast<uint32_t>(cfg.hidden_dim));
    std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
    const std::string path = (std::filesystem::temp_directory_path() / "m2spe_ckpt_bad.bin").string();
    {
        std::ofstream out(path, std::ios::binary);
        out << "WRONGMAGIC.....";
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    {
        std::ofstream out(path, std::ios::binary);
        out << "M2SPE1";  // truncated right after the magic
    }
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
    std::filesystem::remove(path);
    REQUIRE_THROWS_AS(load_checkpoint(path), std::runtime_error);
}

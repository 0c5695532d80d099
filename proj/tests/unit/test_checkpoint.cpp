#include "causalvid/checkpoint.hpp"
#include "causalvid/training.hpp"

#include "test_util.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

using namespace causalvid;
using testutil::tiny_config;

namespace {

namespace fs = std::filesystem;

fs::path scratch_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / ("causalvid_ckpt_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

}  // namespace

TEST(Checkpoint, ArraysAndMetaRoundTrip) {
    const fs::path dir = scratch_dir("raw");
    CheckpointData c;
    c.meta["alpha"] = "1";
    c.meta["name"] = "two words";
    c.arrays.push_back({"x", {2, 3}, {1, 2, 3, 4, 5, 6}});
    c.arrays.push_back({"y", {4}, {0.5f, -0.25f, 7.0f, 1e-7f}});
    write_checkpoint(dir / "c.cvck", c);
    const CheckpointData r = read_checkpoint(dir / "c.cvck");
    EXPECT_EQ(r.meta, c.meta);
    ASSERT_EQ(r.arrays.size(), 2u);
    for (size_t i = 0; i < 2; ++i) {
        EXPECT_EQ(r.arrays[i].name, c.arrays[i].name);
        EXPECT_EQ(r.arrays[i].shape, c.arrays[i].shape);
        EXPECT_EQ(r.arrays[i].data, c.arrays[i].data);
    }
    EXPECT_NE(r.find("y"), nullptr);
    EXPECT_EQ(r.find("z"), nullptr);
    fs::remove_all(dir);
}

TEST(Checkpoint, ModelRoundTripPreservesOutputs) {
    const fs::path dir = scratch_dir("model");
    ModelConfig cfg = tiny_config();
    cfg.causal = false;
    cfg.literal_subprompt = true;
    CausalVideoTransformer m(cfg);
    m.init_parameters(3, InitMode::kRandomAll);
    write_checkpoint(dir / "m.cvck", model_checkpoint(m));
    const CausalVideoTransformer r = model_from_checkpoint(read_checkpoint(dir / "m.cvck"));
    EXPECT_FALSE(r.config().causal);
    EXPECT_TRUE(r.config().literal_subprompt);
    EXPECT_EQ(r.config().hidden_dim, cfg.hidden_dim);
    ASSERT_EQ(r.parameter_count(), m.parameter_count());
    // stored as float32
    for (size_t i = 0; i < m.parameter_count(); ++i) {
        ASSERT_EQ(r.parameters().values()[i], static_cast<double>(static_cast<float>(m.parameters().values()[i])));
    }
    fs::remove_all(dir);
}

TEST(Checkpoint, ConfigMapRoundTrip) {
    ModelConfig c = tiny_config();
    c.prompt_enhance_len = 4;
    const ModelConfig r = model_config_from_map(model_config_to_map(c));
    EXPECT_EQ(model_config_to_map(r), model_config_to_map(c));
    EXPECT_THROW(model_config_from_map({{"hidden_dim", "big"}}), ConfigError);
}

TEST(Checkpoint, CorruptFilesRaiseIoError) {
    const fs::path dir = scratch_dir("corrupt");
    EXPECT_THROW(read_checkpoint(dir / "missing.cvck"), IoError);
    std::ofstream(dir / "magic.cvck") << "XXXX0000";
    EXPECT_THROW(read_checkpoint(dir / "magic.cvck"), IoError);

    CausalVideoTransformer m(tiny_config());
    write_checkpoint(dir / "m.cvck", model_checkpoint(m));
    fs::resize_file(dir / "m.cvck", fs::file_size(dir / "m.cvck") - 8);
    EXPECT_THROW(read_checkpoint(dir / "m.cvck"), IoError);
    fs::remove_all(dir);
}

TEST(Checkpoint, MissingParameterRejected) {
    CausalVideoTransformer m(tiny_config());
    CheckpointData c = model_checkpoint(m);
    c.arrays.erase(c.arrays.begin());
    EXPECT_THROW(model_from_checkpoint(c), IoError);
}

TEST(Checkpoint, TrainingStateRoundTrip) {
    const fs::path dir = scratch_dir("train");
    CausalVideoTransformer m(tiny_config());
    m.init_parameters(5);
    AdamW opt(m.parameter_count(), 1e-3, 0.0);
    std::vector<double> g(m.parameter_count(), 0.01);
    opt.step(m.parameters().values(), g);
    opt.step(m.parameters().values(), g);
    save_training_checkpoint(dir / "t.cvck", m, opt, 17);

    CausalVideoTransformer r(tiny_config());
    AdamW ropt(r.parameter_count(), 1e-3, 0.0);
    EXPECT_EQ(load_training_checkpoint(dir / "t.cvck", r, ropt), 17);
    EXPECT_EQ(ropt.steps(), 2);
    for (size_t i = 0; i < m.parameter_count(); i += 97) {
        EXPECT_FLOAT_EQ(static_cast<float>(ropt.first_moment()[i]), static_cast<float>(opt.first_moment()[i]));
        EXPECT_FLOAT_EQ(static_cast<float>(ropt.second_moment()[i]), static_cast<float>(opt.second_moment()[i]));
    }
    fs::remove_all(dir);
}

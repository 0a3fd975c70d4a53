#include <gtest/gtest.h>

#include <filesystem>
#include <string>

#include "lethe/lethe.h"

namespace fs = std::filesystem;

namespace {

struct Toy {
  lethe_dataset* train = nullptr;
  lethe_dataset* test = nullptr;
  lethe_split* split = nullptr;

  Toy() {
    lethe_toy_spec spec;
    lethe_toy_spec_default(&spec);
    spec.per_class = 8;
    spec.image_size = 8;
    EXPECT_EQ(lethe_dataset_generate(&spec, 1, &train), LETHE_OK);
    spec.per_class = 4;
    EXPECT_EQ(lethe_dataset_generate(&spec, 2, &test), LETHE_OK);
    EXPECT_EQ(lethe_split_random(train, test, 0.25, 3, &split), LETHE_OK);
  }
  ~Toy() {
    lethe_split_free(split);
    lethe_dataset_free(test);
    lethe_dataset_free(train);
  }
};

lethe_vit_config small_vit() {
  lethe_vit_config c;
  lethe_vit_config_default(&c);
  c.image_size = 8;
  c.patch_size = 4;
  c.depth = 1;
  c.dim = 8;
  return c;
}

lethe_train_config short_training() {
  lethe_train_config t;
  lethe_train_config_default(&t);
  t.epochs = 1;
  t.lr = 0.01;
  t.batch_size = 4;
  t.seed = 5;
  return t;
}

}  // namespace

TEST(CApi, VersionAndStatusNames) {
  EXPECT_EQ(lethe_abi_version(), LETHE_ABI_VERSION);
  EXPECT_STREQ(lethe_status_name(LETHE_OK), "ok");
  EXPECT_STREQ(lethe_status_name(LETHE_ERR_CONFIG), "config error");
  EXPECT_STREQ(lethe_status_name(static_cast<lethe_status>(99)), "unknown status");
}

TEST(CApi, NullArgumentsAreRejected) {
  lethe_dataset* d = nullptr;
  EXPECT_EQ(lethe_dataset_generate(nullptr, 1, &d), LETHE_ERR_NULL_ARGUMENT);
  EXPECT_EQ(d, nullptr);
  EXPECT_NE(std::string(lethe_last_error()), "");
  EXPECT_EQ(lethe_dataset_load("x", nullptr), LETHE_ERR_NULL_ARGUMENT);
  lethe_dataset_free(nullptr);
  lethe_split_free(nullptr);
  lethe_model_free(nullptr);
}

TEST(CApi, ErrorKindsMapToStatuses) {
  Toy toy;
  lethe_split* s = nullptr;
  EXPECT_EQ(lethe_split_random(toy.train, toy.test, 1.5, 1, &s), LETHE_ERR_CONFIG);
  EXPECT_NE(std::string(lethe_last_error()).find("ratio"), std::string::npos);
  lethe_dataset* d = nullptr;
  EXPECT_EQ(lethe_dataset_load("/nonexistent/file.ltds", &d), LETHE_ERR_IO);
  auto cfg = small_vit();
  cfg.patch_size = 3;
  lethe_model* m = nullptr;
  EXPECT_EQ(lethe_model_init(&cfg, 1, &m), LETHE_ERR_CONFIG);
  EXPECT_EQ(m, nullptr);
}

TEST(CApi, SuccessClearsLastError) {
  lethe_dataset* d = nullptr;
  EXPECT_NE(lethe_dataset_load("/nonexistent/file.ltds", &d), LETHE_OK);
  Toy toy;
  std::size_t n = 0;
  EXPECT_EQ(lethe_dataset_info(toy.train, &n, nullptr, nullptr, nullptr), LETHE_OK);
  EXPECT_EQ(n, 24u);
  EXPECT_STREQ(lethe_last_error(), "");
}

TEST(CApi, ModelRoundTripKeepsChecksum) {
  const auto cfg = small_vit();
  lethe_model* m = nullptr;
  ASSERT_EQ(lethe_model_init(&cfg, 7, &m), LETHE_OK);
  const auto path = fs::temp_directory_path() / "lethe_capi_model.ltvt";
  ASSERT_EQ(lethe_model_save(m, path.c_str()), LETHE_OK);
  lethe_model* back = nullptr;
  ASSERT_EQ(lethe_model_load(path.c_str(), &back), LETHE_OK);
  std::uint64_t a = 0, b = 0;
  ASSERT_EQ(lethe_model_checksum(m, &a), LETHE_OK);
  ASSERT_EQ(lethe_model_checksum(back, &b), LETHE_OK);
  EXPECT_EQ(a, b);
  lethe_vit_config got;
  ASSERT_EQ(lethe_model_config(back, &got), LETHE_OK);
  EXPECT_EQ(got.dim, 8u);
  EXPECT_EQ(got.depth, 1u);
  lethe_model_free(back);
  lethe_model_free(m);
  fs::remove(path);
}

TEST(CApi, SplitSizesAndRoundTrip) {
  Toy toy;
  std::size_t f = 0, r = 0, t = 0;
  ASSERT_EQ(lethe_split_sizes(toy.split, &f, &r, &t), LETHE_OK);
  EXPECT_EQ(f, 6u);
  EXPECT_EQ(r, 18u);
  EXPECT_EQ(t, 12u);
  const auto path = fs::temp_directory_path() / "lethe_capi_split.json";
  ASSERT_EQ(lethe_split_save(toy.split, path.c_str()), LETHE_OK);
  lethe_split* back = nullptr;
  ASSERT_EQ(lethe_split_load(path.c_str(), toy.train, toy.test, &back), LETHE_OK);
  std::size_t f2 = 0;
  ASSERT_EQ(lethe_split_sizes(back, &f2, nullptr, nullptr), LETHE_OK);
  EXPECT_EQ(f2, f);
  lethe_split_free(back);
  fs::remove(path);
}

TEST(CApi, PipelineProducesMetricsAndSweep) {
  Toy toy;
  const auto cfg = small_vit();
  const auto tc = short_training();
  lethe_model *original = nullptr, *retrained = nullptr, *unlearned = nullptr;
  ASSERT_EQ(lethe_train_original(&cfg, toy.train, &tc, &original), LETHE_OK);
  ASSERT_EQ(lethe_retrain(&cfg, toy.train, toy.split, &tc, &retrained), LETHE_OK);
  lethe_unlearn_config uc;
  lethe_unlearn_config_default(&uc);
  uc.forget_epochs = 1;
  uc.retain_epochs = 1;
  uc.batch_size = 4;
  uc.mask_ratio = 0.25;
  lethe_unlearn_stats st;
  ASSERT_EQ(lethe_unlearn(original, toy.train, toy.split, &uc, &st, &unlearned), LETHE_OK);
  EXPECT_NEAR(st.cos_neg_start, 1.0, 1e-12);
  EXPECT_GT(st.forget_steps, 0u);

  lethe_metrics re, un;
  ASSERT_EQ(lethe_evaluate(retrained, toy.train, toy.split, &re), LETHE_OK);
  ASSERT_EQ(lethe_evaluate(unlearned, toy.train, toy.split, &un), LETHE_OK);
  lethe_gap self, gap;
  ASSERT_EQ(lethe_average_gap(&re, &re, &self), LETHE_OK);
  EXPECT_EQ(self.ag, 0.0);
  ASSERT_EQ(lethe_average_gap(&un, &re, &gap), LETHE_OK);
  EXPECT_NEAR(gap.ag, (gap.fa + gap.ra + gap.ta + gap.mia) / 4.0, 1e-12);

  const double ratios[] = {0.0, 0.5};
  const lethe_mask_type types[] = {LETHE_MASK_ZERO, LETHE_MASK_GAUSSIAN};
  lethe_sweep_row rows[4];
  ASSERT_EQ(lethe_masking_sweep(retrained, toy.train, toy.split, ratios, 2, types, 2, 1.0, 3, rows), LETHE_OK);
  EXPECT_EQ(rows[0].ratio, 0.0);
  EXPECT_EQ(rows[1].mask_type, LETHE_MASK_GAUSSIAN);
  EXPECT_EQ(rows[2].ratio, 0.5);
  EXPECT_EQ(rows[0].ta, re.ta);
  EXPECT_EQ(rows[1].ta, re.ta);

  lethe_model_free(unlearned);
  lethe_model_free(retrained);
  lethe_model_free(original);
}

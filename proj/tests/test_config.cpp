#include <gtest/gtest.h>
#include <stdlib.h>
#include <unistd.h>

#include <filesystem>
#include <fstream>

#include "d2nn/config.hpp"

namespace {

using namespace d2nn;
using nlohmann::json;
namespace fs = std::filesystem;

json minimal() { return json::parse(R"({"synthetic": {"readers": 10, "news": 40}})"); }

std::string error_of(const json& j) {
  try {
    parse_run_config(j);
  } catch (const ConfigError& e) {
    return e.what();
  }
  return "";
}

TEST(RunConfig, DefaultsAreTheReferenceOperatingPoint) {
  const RunConfig c = parse_run_config(minimal());
  EXPECT_EQ(c.model.dim, 300u);
  EXPECT_EQ(c.model.filters, 200u);
  EXPECT_EQ(c.model.filter_size, 3u);
  EXPECT_EQ(c.model.headline_len, 30u);
  EXPECT_EQ(c.model.snippet_len, 100u);
  EXPECT_EQ(c.model.recent_window, 100u);
  EXPECT_DOUBLE_EQ(c.model.dropout, 0.2);
  EXPECT_DOUBLE_EQ(c.optimizer.adam.lr, 0.001);
  EXPECT_DOUBLE_EQ(c.optimizer.adam.beta1, 0.9);
  EXPECT_DOUBLE_EQ(c.optimizer.adam.beta2, 0.999);
  EXPECT_DOUBLE_EQ(c.optimizer.adam.eps, 1e-8);
  EXPECT_DOUBLE_EQ(c.optimizer.adam.l2, 0.001);
  EXPECT_EQ(c.optimizer.batch_size, 256u);
  EXPECT_EQ(c.optimizer.neg_ratio, 5u);
  EXPECT_EQ(c.optimizer.max_epochs, 10u);
  EXPECT_EQ(c.optimizer.patience, 2u);
  EXPECT_DOUBLE_EQ(c.optimizer.clip_norm, 5.0);
  EXPECT_EQ(c.evaluation.ks, (std::vector<std::size_t>{5, 10, 20, 50}));
  EXPECT_EQ(c.evaluation.eval_negatives, 49u);
  EXPECT_EQ(c.variant, "d2nn");
}

TEST(RunConfig, UnknownKeysAreNamed) {
  json j = minimal();
  j["optimiser"] = json::object();
  EXPECT_NE(error_of(j).find("optimiser"), std::string::npos);
  j = minimal();
  j["model"] = {{"dim", 8}, {"kernel", 3}};
  EXPECT_NE(error_of(j).find("model.kernel"), std::string::npos);
  j = minimal();
  j["synthetic"]["topicz"] = 2;
  EXPECT_NE(error_of(j).find("synthetic.topicz"), std::string::npos);
}

TEST(RunConfig, RejectsInvalidValues) {
  EXPECT_FALSE(error_of(json::object()).empty());
  json both = minimal();
  both["data"] = {{"news", "a"}, {"behaviors", "b"}};
  EXPECT_FALSE(error_of(both).empty());

  const std::vector<std::pair<std::string, json>> bad = {
      {"model", {{"dim", -1}}},
      {"model", {{"dim", "wide"}}},
      {"model", {{"dropout", 1.0}}},
      {"model", {{"combine", "max"}}},
      {"model", {{"init", "xavier"}}},
      {"optimizer", {{"batch_size", 0}}},
      {"optimizer", {{"neg_ratio", 0}}},
      {"evaluation", {{"ks", json::array()}}},
      {"evaluation", {{"ks", {5, 0}}}},
      {"evaluation", {{"similarity", "euclid"}}},
      {"variant", "multihead:4"},
      {"variant", "sti+lti"},
      {"seed", -3},
      {"vocabulary", {{"words", "xyz"}}},
  };
  for (const auto& [key, value] : bad) {
    json j = minimal();
    j[key] = value;
    EXPECT_FALSE(error_of(j).empty()) << key << " = " << value.dump();
  }
  json topics = minimal();
  topics["synthetic"]["topics"] = 1;
  EXPECT_FALSE(error_of(topics).empty());
}

TEST(RunConfig, SnapshotRoundTrips) {
  json j = minimal();
  j["model"] = {{"dim", 16}, {"combine", "concat_project"}, {"dropout", 0.1}};
  j["optimizer"] = {{"lr", 0.003}, {"batch_size", 64}};
  j["evaluation"] = {{"ks", {3, 7}}, {"similarity", "category_jaccard"}};
  j["variant"] = "sti+no_snippet";
  j["seed"] = 12345678901234ULL;
  j["vocabulary"] = {{"words", "00000000000000ff"}, {"categories", "1"}, {"subcategories", "abc"}};
  const RunConfig c = parse_run_config(j);
  EXPECT_EQ(c.vocabulary->words, 0xffu);
  const json snap = to_json(c);
  const RunConfig back = parse_run_config(snap);
  EXPECT_EQ(to_json(back).dump(), snap.dump());
  EXPECT_EQ(back.evaluation.seed, 12345678901234ULL);
  EXPECT_EQ(back.model.combine, ReaderCombine::ConcatProject);
}

class SeedPrecedence : public ::testing::Test {
 protected:
  void SetUp() override {
    path_ = (fs::temp_directory_path() / ("d2nn_cfg_" + std::to_string(::getpid()) + ".json")).string();
    json j = minimal();
    j["seed"] = 3;
    std::ofstream(path_) << j.dump();
    ::unsetenv("D2NN_SEED");
  }
  void TearDown() override {
    ::unsetenv("D2NN_SEED");
    fs::remove(path_);
  }
  std::string path_;
};

TEST_F(SeedPrecedence, FlagBeatsEnvironmentBeatsFile) {
  EXPECT_EQ(load_run_config(path_).seed, 3u);
  ::setenv("D2NN_SEED", "11", 1);
  EXPECT_EQ(load_run_config(path_).seed, 11u);
  EXPECT_EQ(load_run_config(path_).evaluation.seed, 11u);
  EXPECT_EQ(load_run_config(path_, 29).seed, 29u);
  ::setenv("D2NN_SEED", "eleven", 1);
  EXPECT_THROW(load_run_config(path_), ConfigError);
}

TEST_F(SeedPrecedence, FileErrorsAreConfigErrors) {
  EXPECT_THROW(load_run_config(path_ + ".missing"), ConfigError);
  std::ofstream(path_) << "{ not json";
  EXPECT_THROW(load_run_config(path_), ConfigError);
}

TEST(Variant, ParsesBaseModelsAndRemovalFlags) {
  EXPECT_EQ(Variant::parse("d2nn"), Variant{});
  const Variant v = Variant::parse("sti+no_snippet_taxonomy+no_word_attn");
  EXPECT_EQ(v.base, ReaderBase::ShortTermOnly);
  EXPECT_TRUE(v.no_snippet);
  EXPECT_TRUE(v.no_taxonomy);
  EXPECT_TRUE(v.no_word_attn);
  EXPECT_EQ(Variant::parse("no_reader_attn").base, ReaderBase::Full);
  for (const char* h : {"3", "5", "10", "16"})
    EXPECT_EQ(Variant::parse(std::string("multihead:") + h).heads, std::stoul(h));
  for (const char* name : {"lti", "sti", "no_snippet", "no_snippet_taxonomy", "no_word_attn", "no_news_attn",
                           "no_reader_attn", "multihead:16", "sti+no_news_attn+no_reader_attn"}) {
    const Variant p = Variant::parse(name);
    EXPECT_EQ(Variant::parse(p.name()), p) << name;
  }
  for (const char* bad : {"", "lstm", "multihead:7", "lti+sti", "multihead:3+sti", "lti+no_reader_attn"})
    EXPECT_THROW(Variant::parse(bad), ConfigError) << bad;
}

TEST(PrepareData, VocabularyStampMustMatch) {
  RunConfig c = parse_run_config(minimal());
  c.model.headline_len = 4;
  c.model.snippet_len = 6;
  const PreparedData d = prepare_data(c);
  c.vocabulary = stamp(d.dataset);
  EXPECT_NO_THROW(prepare_data(c));
  c.vocabulary->words ^= 1;
  EXPECT_THROW(prepare_data(c), ConfigError);
}

}  // namespace

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "mtex/pipeline.hpp"

namespace fs = std::filesystem;
using mtex::json;
using mtex::RunConfig;

namespace {

fs::path scratch_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("mtex_pipe_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Five one-conv stacks of 4 filters: every tap exists and a forward costs almost nothing.
json tiny_run() {
  return json::parse(R"({
    "synthetic": {"n_per_class": 4, "size": 32, "noise": 4},
    "network": {"stacks": [[1, 4], [1, 4], [1, 4], [1, 4], [1, 4]]},
    "featurizers": ["mean", "max", "gram", "vlad"],
    "taps": ["C12", "C33+C12", "raw"],
    "vlad": {"n_words": 3, "sample_fraction": 0.5, "resize": [40, 40]},
    "forest": {"n_trees": 15},
    "cv": {"n_trials": 2, "n_folds": 2},
    "seed": 11
  })");
}

RunConfig tiny_config(std::size_t jobs = 1) {
  auto c = mtex::parse_run_config(tiny_run(), ".");
  c.jobs = jobs;
  return c;
}

}  // namespace

TEST(TapGroup, ParsingAndCanonicalName) {
  EXPECT_EQ(mtex::parse_tap_group("C22").name(), "C22");
  EXPECT_EQ(mtex::parse_tap_group("C53+C12+raw").name(), "raw+C12+C53");
  EXPECT_EQ(mtex::parse_tap_group("all").name(), "C12+C22+C33+C43+C53");
  EXPECT_TRUE(mtex::parse_tap_group("raw").uses_raw());
  EXPECT_TRUE(mtex::parse_tap_group("raw").taps().empty());
  EXPECT_EQ(mtex::parse_tap_group("C43 + C22").taps(), (std::set<mtex::Tap>{mtex::Tap::C22, mtex::Tap::C43}));
  EXPECT_THROW(mtex::parse_tap_group("C12+C12"), mtex::RunConfigError);
  EXPECT_THROW(mtex::parse_tap_group("all+C33"), mtex::RunConfigError);
  EXPECT_THROW(mtex::parse_tap_group("C13"), mtex::RunConfigError);
  EXPECT_THROW(mtex::parse_tap_group(""), mtex::RunConfigError);
}

TEST(RunConfigParse, DefaultsAndOverrides) {
  const auto d = mtex::parse_run_config(json::object(), "/base");
  EXPECT_EQ(d.featurizers, std::vector<mtex::Featurizer>{mtex::Featurizer::Mean});
  ASSERT_EQ(d.taps.size(), 5u);
  EXPECT_EQ(d.taps[4].name(), "C53");
  EXPECT_EQ(d.forest.n_trees, 400u);
  EXPECT_EQ(d.n_folds, 3u);
  EXPECT_EQ(d.n_trials, 10u);
  EXPECT_EQ(d.vlad.n_words, 32u);
  EXPECT_EQ(d.vlad.sample_fraction, 1.0);
  EXPECT_EQ(d.vlad.resize, (std::pair<std::size_t, std::size_t>{255, 255}));
  EXPECT_EQ(d.weights, "random");
  EXPECT_EQ(d.network.layers().size(), 13u);

  const auto c = mtex::parse_run_config(json::parse(R"({
    "manifest": "data/m.csv", "weights": "/abs/w.bin", "output": "out",
    "featurizer": "gram", "taps": "all", "vlad": {"resize": null},
    "preprocess": {"crop": [1, 2, 3, 4], "resize": 64, "channel_order": "BGR", "means": [1, 2, 3]},
    "ascent": {"size": [40, 48], "iterations": 5}
  })"), "/base");
  EXPECT_EQ(*c.manifest, fs::path("/base/data/m.csv"));
  EXPECT_EQ(c.weights, "/abs/w.bin");
  EXPECT_EQ(c.output, fs::path("/base/out"));
  EXPECT_EQ(c.featurizers, std::vector<mtex::Featurizer>{mtex::Featurizer::Gram});
  ASSERT_EQ(c.taps.size(), 1u);
  EXPECT_EQ(c.taps[0].layers.size(), 5u);
  EXPECT_FALSE(c.vlad.resize);
  EXPECT_EQ(c.image_spec.crop.bottom, 4u);
  EXPECT_EQ(c.image_spec.resize, (std::pair<std::size_t, std::size_t>{64, 64}));
  EXPECT_EQ(c.pixels.order, mtex::ChannelOrder::BGR);
  EXPECT_EQ(c.ascent.preprocess.order, mtex::ChannelOrder::BGR);
  EXPECT_EQ(c.ascent.width, 48u);
}

TEST(RunConfigParse, SyntheticSeedFollowsRunSeed) {
  const auto a = mtex::parse_run_config(json::parse(R"({"synthetic": {}, "seed": 1})"), ".");
  const auto b = mtex::parse_run_config(json::parse(R"({"synthetic": {}, "seed": 2})"), ".");
  const auto c = mtex::parse_run_config(json::parse(R"({"synthetic": {"seed": 5}, "seed": 2})"), ".");
  EXPECT_NE(a.synthetic->seed, b.synthetic->seed);
  EXPECT_EQ(c.synthetic->seed, 5u);
  EXPECT_EQ(a.synthetic->classes.size(), 3u);
}

TEST(RunConfigParse, Errors) {
  for (const char* bad : {
           R"({"sed": 1})",
           R"({"forest": {"trees": 3}})",
           R"({"forest": {"n_trees": 0}})",
           R"({"forest": {"n_trees": -4}})",
           R"({"cv": {"n_folds": 1}})",
           R"({"vlad": {"sample_fraction": 0}})",
           R"({"vlad": {"n_words": 0}})",
           R"({"featurizers": ["mean", "median"]})",
           R"({"featurizers": []})",
           R"({"taps": []})",
           R"({"taps": ["C99"]})",
           R"({"network": "resnet"})",
           R"({"network": {"stacks": [[0, 4]]}})",
           R"({"network": {"stacks": [[1,1],[1,1],[1,1],[1,1],[1,1],[1,1]]}})",
           R"({"preprocess": {"channel_order": "GRB"}})",
           R"({"preprocess": {"resize": [16, 64]}})",
           R"({"preprocess": {"crop": [1, 2]}})",
           R"({"ascent": {"iterations": 0}})",
           R"({"synthetic": {"classes": [{"label": "a", "kind": "blobs"}]}})",
           R"({"manifest": 3})",
       }) {
    EXPECT_THROW(mtex::parse_run_config(json::parse(bad), "."), mtex::RunConfigError) << bad;
  }
  EXPECT_THROW(mtex::load_run_config("/nonexistent/run.json"), mtex::IoError);
  const auto dir = scratch_dir("badjson");
  std::ofstream(dir / "run.json") << "{ not json";
  EXPECT_THROW(mtex::load_run_config(dir / "run.json"), mtex::RunConfigError);
  EXPECT_THROW(mtex::open_dataset(RunConfig{}), mtex::RunConfigError);
}

TEST(FeatureCsv, LabelRoundTrip) {
  using mtex::Featurizer;
  for (const mtex::FeatureLabel& l : std::vector<mtex::FeatureLabel>{{Featurizer::Mean, "C33", 17, 0},
                                                                     {Featurizer::Max, "raw", 2, 0},
                                                                     {Featurizer::Gram, "C12", 3, 41},
                                                                     {Featurizer::Vlad, "C53", 31, 511}}) {
    EXPECT_EQ(mtex::parse_feature_label(l.str()), l) << l.str();
  }
  for (const char* bad : {"mean", "mean:C33", "mean:C33:x1", "mean:C34:f1", "gram:C12:i1", "vlad:C12:w1_f2x", "sum:C12:f1"}) {
    EXPECT_THROW(mtex::parse_feature_label(bad), mtex::FormatError) << bad;
  }
}

TEST(FeatureCsv, ValuesRoundTripBitExact) {
  mtex::FeatureTable t;
  t.kind = mtex::Featurizer::Gram;
  t.group = mtex::parse_tap_group("C12+C22");
  for (std::uint32_t j = 0; j < 6; ++j) t.labels.push_back({mtex::Featurizer::Gram, j < 3 ? "C12" : "C22", j, j + 1});
  std::mt19937_64 gen(3);
  std::uniform_real_distribution<float> u(-1, 1);
  std::vector<float> v(4 * 6);
  for (auto& x : v) x = u(gen) * std::pow(10.0f, static_cast<float>(gen() % 60) - 30.0f);
  v[0] = 0.0f;
  v[1] = -0.0f;
  v[2] = std::numeric_limits<float>::denorm_min();
  v[3] = std::numeric_limits<float>::max();
  t.X = mtex::Matrix(4, 6, v);
  t.names = {"a.png", "dir, with comma/b.png", "quote\"d.png", "d.png"};
  t.classes = {"x", "y", "x, y", "y"};
  const auto dir = scratch_dir("csv");
  mtex::write_features_csv(dir / "f.csv", t);
  const auto r = mtex::read_features_csv(dir / "f.csv");
  EXPECT_EQ(r.kind, t.kind);
  EXPECT_EQ(r.group, t.group);
  EXPECT_EQ(r.labels, t.labels);
  EXPECT_EQ(r.names, t.names);
  EXPECT_EQ(r.classes, t.classes);
  ASSERT_EQ(r.X.values().size(), v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    EXPECT_EQ(std::bit_cast<std::uint32_t>(r.X.values()[i]), std::bit_cast<std::uint32_t>(v[i])) << i;
  }
}

TEST(FeatureCsv, Errors) {
  const auto dir = scratch_dir("csv_err");
  EXPECT_THROW(mtex::read_features_csv(dir / "missing.csv"), mtex::IoError);
  auto expect_format = [&](const std::string& text) {
    std::ofstream(dir / "f.csv") << text;
    EXPECT_THROW(mtex::read_features_csv(dir / "f.csv"), mtex::FormatError) << text;
  };
  expect_format("");
  expect_format("path,label\na,b\n");
  expect_format("file,label,mean:C12:f000\na,b,1\n");
  expect_format("path,label,mean:C12:f000\n");
  expect_format("path,label,mean:C12:f000\na,b,1,2\n");
  expect_format("path,label,mean:C12:f000\na,b,1e\n");
  expect_format("path,label,mean:C12:f000,max:C12:f000\na,b,1,2\n");
}

TEST(EncodeLabels, SortedClassIndices) {
  const auto [y, classes] = mtex::encode_labels({"ferrite", "austenite", "ferrite", "pearlite"});
  EXPECT_EQ(classes, (std::vector<std::string>{"austenite", "ferrite", "pearlite"}));
  EXPECT_EQ(y, (std::vector<int>{1, 0, 1, 2}));
}

TEST(FeaturizeDataset, TablesInConfigOrderWithExpectedWidths) {
  const auto cfg = tiny_config();
  const auto data = mtex::open_dataset(cfg);
  ASSERT_EQ(data.size(), 12u);
  const auto tables = mtex::featurize_dataset(data, mtex::open_weights(cfg), cfg);
  ASSERT_EQ(tables.size(), 12u);
  const std::vector<std::string> ids{"mean_C12", "mean_C12+C33", "mean_raw", "max_C12", "max_C12+C33", "max_raw",
                                     "gram_C12", "gram_C12+C33", "gram_raw", "vlad_C12", "vlad_C12+C33", "vlad_raw"};
  const std::vector<std::size_t> widths{4, 8, 3, 4, 8, 3, 16, 32, 9, 12, 24, 9};
  for (std::size_t i = 0; i < tables.size(); ++i) {
    EXPECT_EQ(tables[i].id(), ids[i]);
    EXPECT_EQ(tables[i].X.rows(), 12u);
    EXPECT_EQ(tables[i].X.cols(), widths[i]) << ids[i];
    EXPECT_EQ(tables[i].labels.size(), widths[i]);
    EXPECT_EQ(tables[i].classes, data.labels);
  }
}

TEST(FeaturizeDataset, MatchesDirectComputation) {
  const auto cfg = tiny_config();
  const auto data = mtex::open_dataset(cfg);
  const auto w = mtex::open_weights(cfg);
  const auto tables = mtex::featurize_dataset(data, w, cfg);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto x = mtex::network_input(data, i, cfg);
    const auto taps = mtex::forward(x, w, {mtex::Tap::C12, mtex::Tap::C33});
    const auto m12 = mtex::mean_features(taps.at(mtex::Tap::C12), "C12");
    const auto m33 = mtex::mean_features(taps.at(mtex::Tap::C33), "C33");
    for (std::size_t j = 0; j < 4; ++j) {
      EXPECT_EQ(tables[0].X(i, j), m12.values[j]);
      EXPECT_EQ(tables[1].X(i, j), m12.values[j]);
      EXPECT_EQ(tables[1].X(i, 4 + j), m33.values[j]);
    }
    // raw mean is the per-channel mean of the preprocessed input
    for (std::size_t c = 0; c < 3; ++c) {
      double s = 0;
      for (float v : x.channel(c)) s += v;
      EXPECT_NEAR(tables[2].X(i, c), s / static_cast<double>(x.plane_size()), 1e-3);
    }
    const auto g = mtex::gram_features(taps.at(mtex::Tap::C33), "C33");
    for (std::size_t j = 0; j < 16; ++j) EXPECT_EQ(tables[7].X(i, 16 + j), g.values[j]);
  }
}

TEST(FeaturizeDataset, VladRowsAreUnitOrZero) {
  const auto cfg = tiny_config();
  const auto tables = mtex::featurize_dataset(mtex::open_dataset(cfg), mtex::open_weights(cfg), cfg);
  for (std::size_t t = 9; t < 12; ++t) {
    const auto& X = tables[t].X;
    const std::size_t per_layer = tables[t].group.layers.size() == 2 ? X.cols() / 2 : X.cols();
    for (std::size_t i = 0; i < X.rows(); ++i) {
      for (std::size_t off = 0; off < X.cols(); off += per_layer) {
        double ss = 0;
        for (std::size_t j = off; j < off + per_layer; ++j) ss += double(X(i, j)) * X(i, j);
        EXPECT_TRUE(std::abs(ss - 1.0) < 1e-5 || ss == 0.0) << tables[t].id() << " row " << i << " ss " << ss;
      }
    }
  }
}

TEST(FeaturizeDataset, IndependentOfJobs) {
  const auto a = tiny_config(1);
  const auto b = tiny_config(3);
  const auto ta = mtex::featurize_dataset(mtex::open_dataset(a), mtex::open_weights(a), a);
  const auto tb = mtex::featurize_dataset(mtex::open_dataset(b), mtex::open_weights(b), b);
  ASSERT_EQ(ta.size(), tb.size());
  for (std::size_t i = 0; i < ta.size(); ++i) {
    EXPECT_TRUE(std::equal(ta[i].X.values().begin(), ta[i].X.values().end(), tb[i].X.values().begin())) << ta[i].id();
  }
}

TEST(FeaturizeDataset, RejectsTapBeyondNetworkDepth) {
  auto j = tiny_run();
  j["network"] = json::parse(R"({"stacks": [[1, 4], [1, 4]]})");
  j["taps"] = "C33";
  const auto cfg = mtex::parse_run_config(j, ".");
  EXPECT_THROW(mtex::featurize_dataset(mtex::open_dataset(cfg), mtex::open_weights(cfg), cfg), mtex::RunConfigError);
}

TEST(Commands, GeneratedFilesFeaturizeLikeInMemoryImages) {
  const auto dir = scratch_dir("generate");
  auto cfg = tiny_config();
  cfg.output = dir;
  const auto manifest = mtex::cmd_generate(cfg);
  EXPECT_EQ(mtex::load_manifest(manifest).records.size(), 12u);

  auto from_disk = cfg;
  from_disk.synthetic.reset();
  from_disk.manifest = manifest;
  from_disk.featurizers = {mtex::Featurizer::Mean};
  auto in_memory = cfg;
  in_memory.featurizers = {mtex::Featurizer::Mean};
  const auto a = mtex::featurize_dataset(mtex::open_dataset(from_disk), mtex::open_weights(cfg), from_disk);
  const auto b = mtex::featurize_dataset(mtex::open_dataset(in_memory), mtex::open_weights(cfg), in_memory);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(std::equal(a[i].X.values().begin(), a[i].X.values().end(), b[i].X.values().begin()));
    EXPECT_EQ(a[i].classes, b[i].classes);
  }
}

TEST(Commands, FeaturizeThenEvaluateFromCsv) {
  const auto dir = scratch_dir("feat_eval");
  auto cfg = tiny_config();
  cfg.output = dir;
  cfg.featurizers = {mtex::Featurizer::Max};
  cfg.taps = {mtex::parse_tap_group("C12+C33")};
  const auto written = mtex::cmd_featurize(cfg);
  ASSERT_EQ(written.size(), 1u);
  EXPECT_EQ(written[0].filename(), "features_max_C12+C33.csv");

  const auto direct = mtex::cmd_evaluate(cfg);
  const auto direct_csv = slurp(dir / "evaluation.csv");
  cfg.features = written[0];
  const auto from_csv = mtex::cmd_evaluate(cfg);
  ASSERT_EQ(from_csv.size(), 1u);
  EXPECT_EQ(from_csv[0].trial_f1, direct[0].trial_f1);
  EXPECT_EQ(slurp(dir / "evaluation.csv"), direct_csv);

  const auto dump = json::parse(slurp(dir / "forest_max_C12+C33.json"));
  EXPECT_EQ(dump.at("featurizer"), "max");
  EXPECT_EQ(dump.at("taps"), "C12+C33");
  EXPECT_EQ(dump.at("class_names").size(), 3u);
  EXPECT_EQ(dump.at("feature_labels").size(), 8u);
  EXPECT_EQ(dump.at("feature_labels")[4], "max:C33:f000");
  EXPECT_EQ(mtex::RandomForest::from_json(dump).n_features(), 8u);
}

TEST(Commands, EvaluateIsByteIdenticalAcrossJobs) {
  std::string first;
  for (std::size_t jobs : {1, 2, 4}) {
    const auto dir = scratch_dir("jobs" + std::to_string(jobs));
    auto cfg = tiny_config(jobs);
    cfg.output = dir;
    cfg.featurizers = {mtex::Featurizer::Mean, mtex::Featurizer::Vlad};
    mtex::cmd_evaluate(cfg);
    const auto csv = slurp(dir / "evaluation.csv");
    const auto forest = slurp(dir / "forest_vlad_C12+C33.json");
    if (first.empty()) {
      first = csv + forest;
      EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 6 * 3);
    } else {
      EXPECT_EQ(csv + forest, first) << "jobs " << jobs;
    }
  }
}

TEST(Commands, VisualizeModes) {
  const auto dir = scratch_dir("viz");
  auto cfg = tiny_config();
  cfg.output = dir;
  cfg.ascent.height = cfg.ascent.width = 32;
  cfg.ascent.iterations = 5;
  cfg.featurizers = {mtex::Featurizer::Mean};
  cfg.taps = {mtex::parse_tap_group("C12+C33")};

  cfg.visualize.mode = "textures";
  EXPECT_THROW(mtex::cmd_visualize(cfg), mtex::UsageError);
  cfg.visualize.tap = "C33";
  cfg.visualize.filters = {1, 3};
  auto r = mtex::cmd_visualize(cfg);
  ASSERT_EQ(r.images.size(), 2u);
  EXPECT_EQ(r.images[1].filename(), "textures_C33_f3.png");
  EXPECT_EQ(mtex::read_image(r.images[0]).width, 32u);
  EXPECT_EQ(slurp(r.index).substr(0, 30), "tap,filter,objective,path\nC33,");
  cfg.visualize.filters = {4};
  EXPECT_THROW(mtex::cmd_visualize(cfg), mtex::RunConfigError);
  cfg.visualize.filters = {1};

  mtex::cmd_evaluate(cfg);
  cfg.visualize.mode = "important";
  EXPECT_THROW(mtex::cmd_visualize(cfg), mtex::UsageError);
  cfg.visualize.forest = dir / "forest_mean_C12+C33.json";
  cfg.visualize.k = 2;
  r = mtex::cmd_visualize(cfg);
  EXPECT_EQ(r.images.size(), 2u);

  cfg.visualize.mode = "characteristic";
  r = mtex::cmd_visualize(cfg);
  EXPECT_EQ(r.images.size(), 3u);
  const auto index = slurp(r.index);
  EXPECT_EQ(std::count(index.begin(), index.end(), '\n'), 4);

  cfg.visualize.mode = "heatmap";
  EXPECT_THROW(mtex::cmd_visualize(cfg), mtex::UsageError);
  cfg.visualize.image = dir / "probe.png";
  mtex::write_png(*cfg.visualize.image, mtex::open_dataset(cfg).images[0]);
  r = mtex::cmd_visualize(cfg);
  ASSERT_EQ(r.images.size(), 1u);
  EXPECT_EQ(mtex::read_image(r.images[0]).channels, 1u);

  cfg.visualize.mode = "gradcam";
  EXPECT_THROW(mtex::cmd_visualize(cfg), mtex::UsageError);
}

TEST(Commands, ImportantRejectsRawLayer) {
  const auto dir = scratch_dir("viz_raw");
  auto cfg = tiny_config();
  cfg.output = dir;
  cfg.featurizers = {mtex::Featurizer::Mean};
  cfg.taps = {mtex::parse_tap_group("raw")};
  mtex::cmd_evaluate(cfg);
  cfg.visualize.mode = "important";
  cfg.visualize.forest = dir / "forest_mean_raw.json";
  EXPECT_THROW(mtex::cmd_visualize(cfg), mtex::UnsupportedError);
}

TEST(Commands, ConvertCheck) {
  const auto dir = scratch_dir("convert");
  const auto net = tiny_config().network;
  mtex::save_weights(dir / "w.bin", mtex::random_weights<float>(net, 3));
  const auto summary = mtex::cmd_convert_check(dir / "w.bin", net);
  EXPECT_NE(summary.find("OK, 10 entries, 704 parameters"), std::string::npos) << summary;
  auto bytes = mtex::read_file_bytes(dir / "w.bin");
  bytes[bytes.size() / 2] ^= 0x10;
  mtex::write_file_bytes(dir / "bad.bin", bytes);
  EXPECT_THROW(mtex::cmd_convert_check(dir / "bad.bin", net), mtex::CorruptionError);
  EXPECT_THROW(mtex::cmd_convert_check(dir / "w.bin", mtex::VggConfig::vgg16()), mtex::SchemaError);
}

#ifdef MTEX_CLI
namespace {

int cli(const std::string& args) {
  const int status = std::system((std::string(MTEX_CLI) + " " + args + " >/dev/null 2>&1").c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST(Cli, ExitCodes) {
  const auto dir = scratch_dir("cli");
  EXPECT_EQ(cli("--help"), 0);
  EXPECT_EQ(cli(""), 2);
  EXPECT_EQ(cli("evaluate --bogus-flag"), 2);
  EXPECT_EQ(cli("evaluate --config " + (dir / "missing.json").string()), 2);
  std::ofstream(dir / "unknown.json") << R"({"sed": 1})";
  EXPECT_EQ(cli("evaluate --config " + (dir / "unknown.json").string()), 2);
  std::ofstream(dir / "nodata.json") << "{}";
  EXPECT_EQ(cli("featurize --config " + (dir / "nodata.json").string() + " --out " + (dir / "x").string()), 2);
  EXPECT_EQ(cli("convert-check " + (dir / "none.bin").string()), 2);
  EXPECT_EQ(cli("generate --out " + (dir / "gen").string() + " --seed 4"), 0);
  EXPECT_TRUE(fs::exists(dir / "gen" / "manifest.csv"));
  // a manifest row naming a missing image fails while featurizing
  std::ofstream(dir / "gen" / "manifest.csv", std::ios::app) << "images/absent.png,pearlite\n";
  std::ofstream(dir / "m.json") << R"({"manifest": "gen/manifest.csv"})";
  EXPECT_EQ(cli("featurize --config " + (dir / "m.json").string() + " --out " + (dir / "feat").string()), 2);
  EXPECT_FALSE(fs::exists(dir / "feat"));
}

TEST(Cli, EvaluateByteIdenticalAcrossJobs) {
  const auto dir = scratch_dir("cli_jobs");
  auto run = tiny_run();
  run["featurizers"] = {"mean", "vlad"};
  std::ofstream(dir / "run.json") << run.dump();
  const std::string cfg = (dir / "run.json").string();
  ASSERT_EQ(cli("evaluate --config " + cfg + " --jobs 1 --out " + (dir / "a").string()), 0);
  ASSERT_EQ(cli("evaluate --config " + cfg + " --jobs 3 --out " + (dir / "b").string()), 0);
  ASSERT_EQ(cli("evaluate --config " + cfg + " --jobs 3 --seed 12 --out " + (dir / "c").string()), 0);
  const auto a = slurp(dir / "a" / "evaluation.csv");
  EXPECT_FALSE(a.empty());
  EXPECT_EQ(a, slurp(dir / "b" / "evaluation.csv"));
  EXPECT_EQ(slurp(dir / "a" / "forest_vlad_C12+C33.json"), slurp(dir / "b" / "forest_vlad_C12+C33.json"));
  EXPECT_NE(slurp(dir / "a" / "forest_mean_C12.json"), slurp(dir / "c" / "forest_mean_C12.json"));
}
#endif

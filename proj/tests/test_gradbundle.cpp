#include <cstring>
#include <fstream>

#include <gtest/gtest.h>
#include <nlohmann/json.hpp>

#include "gdps/gradbundle.hpp"
#include "oracles.hpp"
#include "test_support.hpp"

namespace fs = std::filesystem;
using gdps::GradientBundle;
using gdps::GradientMatrix;
using gdps::RowMatrix;

namespace {

GradientBundle random_bundle(oracle::Gen& gen, int n_tasks, int n_layers) {
  std::vector<std::string> tasks;
  for (int t = 0; t < n_tasks; ++t) tasks.push_back("task" + std::to_string(t));
  std::vector<gdps::LayerSpec> layers;
  for (int l = 0; l < n_layers; ++l) layers.push_back({"layer" + std::to_string(l), gen.integer(1, 9)});
  std::vector<GradientMatrix> entries;
  for (const auto& t : tasks)
    for (const auto& l : layers) entries.emplace_back(t, l.name, RowMatrix(gen.matrix(gen.integer(1, 7), l.cols, 3.0)));
  return GradientBundle(tasks, layers, std::move(entries));
}

bool bit_equal(const GradientBundle& a, const GradientBundle& b) {
  if (a.tasks() != b.tasks() || a.layers().size() != b.layers().size()) return false;
  for (const auto& t : a.tasks())
    for (const auto& l : a.layers()) {
      const RowMatrix& x = a.entry(t, l.name).data();
      const RowMatrix& y = b.entry(t, l.name).data();
      if (x.rows() != y.rows() || x.cols() != y.cols()) return false;
      if (std::memcmp(x.data(), y.data(), sizeof(double) * static_cast<std::size_t>(x.size())) != 0) return false;
    }
  return true;
}

GradientBundle two_by_one() {
  RowMatrix a(3, 4), b(3, 4);
  a << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
  b << -1, 0.5, 0.25, 2, 0, 0, 1, 1, 3, -3, 2, -2;
  return GradientBundle({"a", "b"}, {{"ffn", 4}}, {GradientMatrix("a", "ffn", a), GradientMatrix("b", "ffn", b)});
}

void patch_file(const fs::path& p, const std::function<void(std::string&)>& edit) {
  std::string bytes = gdps::read_file_bytes(p, "test");
  edit(bytes);
  gdps::write_file_bytes(p, bytes, "test");
}

}  // namespace

TEST(WriteBundle, WritesManifestAndOneFilePerEntry) {
  const auto dir = oracle::scratch_dir("wb_struct");
  gdps::write_bundle(two_by_one(), dir);
  EXPECT_TRUE(fs::exists(dir / "manifest.json"));
  EXPECT_TRUE(fs::exists(dir / "a__ffn.gdm"));
  EXPECT_TRUE(fs::exists(dir / "b__ffn.gdm"));
  int files = 0;
  for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir)) ++files;
  EXPECT_EQ(files, 3);
  EXPECT_EQ(fs::file_size(dir / "a__ffn.gdm"), 12u + 3u * 4u * 4u);
}

TEST(WriteBundle, RoundTripIsBitExact) {
  const auto dir = oracle::scratch_dir("wb_roundtrip");
  const GradientBundle b = two_by_one();
  gdps::write_bundle(b, dir);
  EXPECT_TRUE(bit_equal(b, gdps::read_bundle(dir)));
}

TEST(WriteBundle, MissingEntryNamesThePair) {
  RowMatrix m = RowMatrix::Ones(3, 4);
  EXPECT_TRUE(throws_gdps([&] { GradientBundle({"a", "b"}, {{"ffn", 4}}, {GradientMatrix("a", "ffn", m)}); },
                          "bundle.validate", 1, "(b, ffn): missing entry"));
}

TEST(WriteBundle, UnwritablePathIsRejected) {
  const auto dir = oracle::scratch_dir("wb_unwritable");
  gdps::write_file_bytes(dir / "plain_file", "x", "test");
  EXPECT_TRUE(throws_gdps([&] { gdps::write_bundle(two_by_one(), dir / "plain_file" / "sub"); }, "bundle.write", 1));
}

TEST(ReadBundle, TruncatedPayloadIsShapeMismatch) {
  const auto dir = oracle::scratch_dir("rb_trunc");
  gdps::write_bundle(two_by_one(), dir);
  patch_file(dir / "a__ffn.gdm", [](std::string& s) { s.resize(s.size() - 4); });
  EXPECT_TRUE(throws_gdps([&] { gdps::read_bundle(dir); }, "gdm.read", 1, "shape mismatch"));
}

TEST(ReadBundle, ZeroRowHeaderIsRejected) {
  const auto dir = oracle::scratch_dir("rb_zero");
  gdps::write_bundle(two_by_one(), dir);
  patch_file(dir / "b__ffn.gdm", [](std::string& s) { std::memset(s.data() + 4, 0, 4); });
  EXPECT_TRUE(throws_gdps([&] { gdps::read_bundle(dir); }, "gdm.read", 1, "empty matrix"));
}

TEST(ReadBundle, MissingManifestIsRejected) {
  const auto dir = oracle::scratch_dir("rb_nomanifest");
  EXPECT_TRUE(throws_gdps([&] { gdps::read_bundle(dir); }, "bundle.read", 1, "missing manifest"));
}

TEST(ReadBundle, NonFiniteEntryReportsLocation) {
  const auto dir = oracle::scratch_dir("rb_nan");
  gdps::write_bundle(two_by_one(), dir);
  patch_file(dir / "a__ffn.gdm", [](std::string& s) {
    const float nan = std::numeric_limits<float>::quiet_NaN();
    std::memcpy(s.data() + 12 + 4 * (1 * 4 + 2), &nan, 4);
  });
  EXPECT_TRUE(throws_gdps([&] { gdps::read_bundle(dir); }, "gdm.read", 1, "non-finite entry at row 1, col 2"));
}

TEST(ReadBundle, ManifestHeaderDisagreementIsRejected) {
  const auto dir = oracle::scratch_dir("rb_header");
  gdps::write_bundle(two_by_one(), dir);
  // Rewrite a file as a consistent 4x3 matrix: header and payload agree, manifest does not.
  gdps::write_gdm(dir / "a__ffn.gdm", RowMatrix::Ones(4, 3));
  EXPECT_TRUE(throws_gdps([&] { gdps::read_bundle(dir); }, "bundle.read", 1, "disagrees with manifest"));
}

TEST(ReadBundle, CorruptFixtureSuiteIsAlwaysRejected) {
  using Edit = std::function<void(const fs::path&)>;
  const std::vector<std::pair<std::string, Edit>> cases = {
      {"bad magic", [](const fs::path& d) { patch_file(d / "a__ffn.gdm", [](std::string& s) { s[0] = 'X'; }); }},
      {"short header", [](const fs::path& d) { patch_file(d / "a__ffn.gdm", [](std::string& s) { s.resize(8); }); }},
      {"extra bytes", [](const fs::path& d) { patch_file(d / "a__ffn.gdm", [](std::string& s) { s += "abcd"; }); }},
      {"inf entry",
       [](const fs::path& d) {
         patch_file(d / "b__ffn.gdm", [](std::string& s) {
           const float inf = std::numeric_limits<float>::infinity();
           std::memcpy(s.data() + 12, &inf, 4);
         });
       }},
      {"missing file", [](const fs::path& d) { fs::remove(d / "b__ffn.gdm"); }},
      {"missing record",
       [](const fs::path& d) {
         auto j = nlohmann::json::parse(gdps::read_file_bytes(d / "manifest.json", "test"));
         j["matrices"].erase(1);
         gdps::write_file_bytes(d / "manifest.json", j.dump(), "test");
       }},
      {"bad version",
       [](const fs::path& d) {
         auto j = nlohmann::json::parse(gdps::read_file_bytes(d / "manifest.json", "test"));
         j["version"] = "99";
         gdps::write_file_bytes(d / "manifest.json", j.dump(), "test");
       }},
      {"manifest not json", [](const fs::path& d) { gdps::write_file_bytes(d / "manifest.json", "{nope", "test"); }},
      {"path escape",
       [](const fs::path& d) {
         auto j = nlohmann::json::parse(gdps::read_file_bytes(d / "manifest.json", "test"));
         j["matrices"][0]["path"] = "../a__ffn.gdm";
         gdps::write_file_bytes(d / "manifest.json", j.dump(), "test");
       }},
  };
  for (const auto& [name, edit] : cases) {
    const auto dir = oracle::scratch_dir("rb_corrupt");
    gdps::write_bundle(two_by_one(), dir);
    edit(dir);
    try {
      gdps::read_bundle(dir);
      ADD_FAILURE() << name << ": corrupt bundle loaded";
    } catch (const gdps::Error& e) {
      EXPECT_EQ(e.exit_code(), 1) << name;
      EXPECT_FALSE(e.stage().empty()) << name;
    }
  }
}

TEST(MeanGradient, SymmetricRows) {
  RowMatrix g(2, 2);
  g << 1, 3, 3, 1;
  const auto b = oracle::bundle_of({"a", "b"}, {g, g});
  EXPECT_EQ(gdps::mean_gradient(b, "a", "l0"), Eigen::Vector2d(2, 2));
}

TEST(MeanGradient, SingleRowIsIdentity) {
  RowMatrix g(1, 3);
  g << 5, 0, -1;
  const auto b = oracle::bundle_of({"a", "b"}, {g, g});
  EXPECT_EQ(gdps::mean_gradient(b, "a", "l0"), Eigen::Vector3d(5, 0, -1));
}

TEST(MeanGradient, StatisticalMeanOfKnownGenerator) {
  oracle::Gen gen(7);
  const double sigma = 0.5;
  Eigen::MatrixXd g(100, 2);
  for (int i = 0; i < 100; ++i) g.row(i) << 1 + gen.normal(sigma), -1 + gen.normal(sigma);
  const auto b = oracle::bundle_of({"a", "b"}, {g, g});
  const Eigen::VectorXd m = gdps::mean_gradient(b, "a", "l0");
  EXPECT_NEAR(m(0), 1.0, 3 * sigma / 10);
  EXPECT_NEAR(m(1), -1.0, 3 * sigma / 10);
}

TEST(MeanGradient, UnknownTaskOrLayer) {
  const auto b = two_by_one();
  EXPECT_TRUE(throws_gdps([&] { gdps::mean_gradient(b, "zzz", "ffn"); }, "bundle.lookup", 1, "unknown task"));
  EXPECT_TRUE(throws_gdps([&] { gdps::mean_gradient(b, "a", "zzz"); }, "bundle.lookup", 1, "unknown layer"));
}

TEST(SampleGradients, ReturnsStoredValues) {
  const auto b = two_by_one();
  const RowMatrix& g = gdps::sample_gradients(b, "a", "ffn");
  ASSERT_EQ(g.rows(), 3);
  ASSERT_EQ(g.cols(), 4);
  EXPECT_EQ(g(0, 0), 1);
  EXPECT_EQ(g(2, 3), 12);
  EXPECT_EQ(&g, &b.entry("a", "ffn").data());
}

TEST(SampleGradients, RowCountMatchesManifest) {
  const auto dir = oracle::scratch_dir("sg_manifest");
  gdps::write_bundle(two_by_one(), dir);
  const auto j = nlohmann::json::parse(gdps::read_file_bytes(dir / "manifest.json", "test"));
  const auto b = gdps::read_bundle(dir);
  for (const auto& r : j["matrices"])
    EXPECT_EQ(gdps::sample_gradients(b, r["task"], r["layer"]).rows(), r["rows"].get<int>());
}

TEST(GradBundleProperty, HundredRandomBundlesRoundTrip) {
  oracle::Gen gen(2343);
  for (int i = 0; i < 100; ++i) {
    const GradientBundle b = random_bundle(gen, gen.integer(1, 4), gen.integer(1, 3));
    const auto dir = oracle::scratch_dir("prop_roundtrip");
    gdps::write_bundle(b, dir);
    ASSERT_TRUE(bit_equal(b, gdps::read_bundle(dir))) << "bundle " << i;
  }
}

TEST(GradBundleProperty, MeanMatchesRowAverage) {
  oracle::Gen gen(99);
  for (int i = 0; i < 30; ++i) {
    const GradientBundle b = random_bundle(gen, 2, 2);
    for (const auto& t : b.tasks())
      for (const auto& l : b.layers()) {
        const Eigen::VectorXd want = oracle::row_mean(gdps::sample_gradients(b, t, l.name));
        const Eigen::VectorXd got = gdps::mean_gradient(b, t, l.name);
        for (Eigen::Index k = 0; k < want.size(); ++k) EXPECT_NEAR(got(k), want(k), 1e-12);
      }
  }
}

TEST(GradBundleProperty, StorageIsF32) {
  RowMatrix m(1, 1);
  m << 0.1;
  const GradientMatrix g("a", "l", m);
  EXPECT_EQ(g.data()(0, 0), static_cast<double>(0.1f));
}

TEST(GradBundleProperty, FingerprintIsContentHash) {
  const auto a = two_by_one();
  const auto dir = oracle::scratch_dir("fingerprint");
  gdps::write_bundle(a, dir);
  EXPECT_EQ(gdps::bundle_fingerprint(a), gdps::bundle_fingerprint(gdps::read_bundle(dir)));
  RowMatrix m = a.entry("a", "ffn").data();
  m(0, 0) += 1;
  const GradientBundle c({"a", "b"}, {{"ffn", 4}}, {GradientMatrix("a", "ffn", m), a.entry("b", "ffn")});
  EXPECT_NE(gdps::bundle_fingerprint(a), gdps::bundle_fingerprint(c));
}

TEST(GradBundleProperty, ConstructionRejectsDefects) {
  EXPECT_TRUE(throws_gdps([] { GradientMatrix("a", "l", RowMatrix(0, 3)); }, "bundle.validate", 1));
  RowMatrix bad = RowMatrix::Ones(2, 2);
  bad(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_TRUE(throws_gdps([&] { GradientMatrix("a", "l", bad); }, "bundle.validate", 1, "row 1, col 0"));
  const RowMatrix ok = RowMatrix::Ones(2, 2);
  EXPECT_TRUE(throws_gdps(
      [&] { GradientBundle({"a"}, {{"l", 3}}, {GradientMatrix("a", "l", ok)}); }, "bundle.validate", 1, "declares 3"));
  EXPECT_TRUE(throws_gdps(
      [&] {
        GradientBundle({"a"}, {{"l", 2}}, {GradientMatrix("a", "l", ok), GradientMatrix("a", "l", ok)});
      },
      "bundle.validate", 1, "duplicate entry"));
}

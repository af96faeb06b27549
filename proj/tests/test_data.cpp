// SPDX-License-Identifier: Apache-2.0
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "subnetcl/data.hpp"
#include "subnetcl/errors.hpp"
#include "subnetcl/rng.hpp"

using namespace subnetcl;

namespace {

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

void write_bytes(const std::string& path, const std::vector<unsigned char>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

void push_u32_be(std::vector<unsigned char>& v, std::uint32_t x) {
  v.push_back(static_cast<unsigned char>(x >> 24));
  v.push_back(static_cast<unsigned char>(x >> 16));
  v.push_back(static_cast<unsigned char>(x >> 8));
  v.push_back(static_cast<unsigned char>(x));
}

}  // namespace

TEST_CASE("idx loader recovers a hand-built fixture byte by byte") {
  // two 3x3 images with exact pixel values
  std::vector<unsigned char> img;
  push_u32_be(img, 0x00000803);
  push_u32_be(img, 2);
  push_u32_be(img, 3);
  push_u32_be(img, 3);
  for (int p = 0; p < 9; ++p) img.push_back(static_cast<unsigned char>(p * 10));
  for (int p = 0; p < 9; ++p) img.push_back(static_cast<unsigned char>(255 - p));
  std::vector<unsigned char> lab;
  push_u32_be(lab, 0x00000801);
  push_u32_be(lab, 2);
  lab.push_back(7);
  lab.push_back(0);

  const std::string ip = temp_path("idx_fixture_images");
  const std::string lp = temp_path("idx_fixture_labels");
  write_bytes(ip, img);
  write_bytes(lp, lab);

  const auto d = data::load_idx(ip, lp);
  REQUIRE(d.size() == 2);
  REQUIRE(d.x.cols() == 9);
  for (int p = 0; p < 9; ++p) {
    CHECK(d.x(0, p) == doctest::Approx(p * 10 / 255.0));
    CHECK(d.x(1, p) == doctest::Approx((255 - p) / 255.0));
  }
  CHECK(d.labels[0] == 7);
  CHECK(d.labels[1] == 0);
}

TEST_CASE("idx loader error paths carry offsets and magic values") {
  const std::string ip = temp_path("idx_bad_images");
  const std::string lp = temp_path("idx_bad_labels");

  // labels file carrying the image magic -> wrong magic
  std::vector<unsigned char> img;
  push_u32_be(img, 0x00000803);
  push_u32_be(img, 1);
  push_u32_be(img, 1);
  push_u32_be(img, 1);
  img.push_back(42);
  write_bytes(ip, img);
  std::vector<unsigned char> lab;
  push_u32_be(lab, 0x00000803);  // wrong
  push_u32_be(lab, 1);
  lab.push_back(1);
  write_bytes(lp, lab);
  CHECK_THROWS_WITH_AS(static_cast<void>(data::load_idx(ip, lp)),
                       doctest::Contains("wrong magic"), ParseError);

  // empty file -> truncation at offset 0
  write_bytes(ip, {});
  CHECK_THROWS_WITH_AS(static_cast<void>(data::load_idx(ip, lp)),
                       doctest::Contains("offset 0"), ParseError);

  // truncated payload
  std::vector<unsigned char> short_img;
  push_u32_be(short_img, 0x00000803);
  push_u32_be(short_img, 2);
  push_u32_be(short_img, 2);
  push_u32_be(short_img, 2);
  short_img.push_back(1);  // needs 8 pixel bytes
  write_bytes(ip, short_img);
  CHECK_THROWS_WITH_AS(static_cast<void>(data::load_idx(ip, lp)),
                       doctest::Contains("truncated"), ParseError);

  // count mismatch
  std::vector<unsigned char> img2;
  push_u32_be(img2, 0x00000803);
  push_u32_be(img2, 2);
  push_u32_be(img2, 1);
  push_u32_be(img2, 1);
  img2.push_back(0);
  img2.push_back(0);
  write_bytes(ip, img2);
  std::vector<unsigned char> lab1;
  push_u32_be(lab1, 0x00000801);
  push_u32_be(lab1, 1);
  lab1.push_back(0);
  write_bytes(lp, lab1);
  CHECK_THROWS_WITH_AS(static_cast<void>(data::load_idx(ip, lp)),
                       doctest::Contains("mismatch"), ParseError);
}

TEST_CASE("write_idx then load_idx is the identity on byte-quantized data") {
  const auto corpus = data::make_glyph_corpus(8, 3);
  const std::string ip = temp_path("glyph_images");
  const std::string lp = temp_path("glyph_labels");
  data::write_idx(corpus, ip, lp);
  const auto back = data::load_idx(ip, lp);
  REQUIRE(back.size() == corpus.size());
  CHECK(back.labels == corpus.labels);
  // loaded pixels are the byte-quantized originals
  for (Eigen::Index i = 0; i < corpus.x.rows(); ++i)
    for (Eigen::Index p = 0; p < corpus.x.cols(); ++p) {
      const float quantized =
          std::lround(corpus.x(i, p) * 255.0f) / 255.0f;
      CHECK(back.x(i, p) == doctest::Approx(quantized).epsilon(1e-6));
    }
}

TEST_CASE("permuted scenario: identity first task, pixel multisets preserved") {
  const auto base = data::make_glyph_corpus(30, 11);
  data::ScenarioSpec spec;
  spec.kind = data::ScenarioKind::kPermuted;
  spec.tasks = 3;
  spec.valid_fraction = 0.1;
  const auto tasks = data::make_scenario(spec, base, base, 5);
  REQUIRE(tasks.size() == 3);

  // task 0 test split is the untouched base
  CHECK(tasks[0].test.x == base.x);

  // later tasks permute pixels: per-image multisets survive
  const auto& t2 = tasks[2].test;
  REQUIRE(t2.x.rows() == base.x.rows());
  for (Eigen::Index i = 0; i < 5; ++i) {
    std::vector<float> a(base.x.row(i).begin(), base.x.row(i).end());
    std::vector<float> b(t2.x.row(i).begin(), t2.x.row(i).end());
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  CHECK(tasks[2].test.x != base.x);

  // determinism
  const auto again = data::make_scenario(spec, base, base, 5);
  CHECK(again[2].train.x == tasks[2].train.x);
  CHECK(again[1].valid.x == tasks[1].valid.x);
}

TEST_CASE("permuted scenario with one task leaves the dataset unchanged") {
  const auto base = data::make_glyph_corpus(12, 13);
  data::ScenarioSpec spec;
  spec.kind = data::ScenarioKind::kPermuted;
  spec.tasks = 1;
  spec.valid_fraction = 0.0;
  const auto tasks = data::make_scenario(spec, base, base, 1);
  CHECK(tasks[0].train.x == base.x);
  CHECK(tasks[0].train.labels == base.labels);
}

TEST_CASE("split scenario partitions classes disjointly and relabels") {
  const auto base = data::make_glyph_corpus(20, 17);
  data::ScenarioSpec spec;
  spec.kind = data::ScenarioKind::kSplit;
  spec.tasks = 5;
  spec.classes_per_task = 2;
  spec.valid_fraction = 0.1;
  const auto tasks = data::make_scenario(spec, base, base, 9);
  REQUIRE(tasks.size() == 5);
  std::set<int> all;
  for (const auto& t : tasks) {
    REQUIRE(t.classes.size() == 2);
    for (int c : t.classes) CHECK(all.insert(c).second);  // pairwise disjoint
    for (int l : t.train.labels) CHECK((l == 0 || l == 1));
  }
  CHECK(all.size() == 10);
  CHECK(tasks[0].classes == std::vector<int>{0, 1});
  CHECK(tasks[1].classes == std::vector<int>{2, 3});

  spec.tasks = 6;
  CHECK_THROWS_AS(data::make_scenario(spec, base, base, 9), ConfigError);
}

TEST_CASE("synthetic scenario is deterministic with disjoint splits") {
  data::ScenarioSpec spec;
  spec.kind = data::ScenarioKind::kSynthetic;
  spec.tasks = 2;
  spec.synth_dim = 8;
  spec.synth_classes = 3;
  spec.synth_train_per_class = 30;
  spec.synth_test_per_class = 10;
  const auto a = data::make_scenario(spec, {}, {}, 77);
  const auto b = data::make_scenario(spec, {}, {}, 77);
  REQUIRE(a.size() == 2);
  CHECK(a[0].train.x == b[0].train.x);
  CHECK(a[1].test.x == b[1].test.x);
  CHECK(a[0].train.x.minCoeff() >= 0.0f);
  CHECK(a[0].train.x.maxCoeff() <= 1.0f);
  // 10% of 90 training rows go to validation
  CHECK(a[0].valid.size() == 9);
  CHECK(a[0].train.size() == 81);
}

TEST_CASE("stratified subsampling bounds the per-task train size") {
  const auto base = data::make_glyph_corpus(40, 23);
  data::ScenarioSpec spec;
  spec.kind = data::ScenarioKind::kPermuted;
  spec.tasks = 2;
  spec.subsample_per_task = 100;
  spec.valid_fraction = 0.1;
  const auto tasks = data::make_scenario(spec, base, base, 3);
  CHECK(tasks[0].train.size() + tasks[0].valid.size() == 100);
  std::map<int, int> counts;
  for (int l : tasks[0].train.labels) counts[l]++;
  for (int l : tasks[0].valid.labels) counts[l]++;
  for (const auto& [cls, n] : counts) CHECK(n == 10);
}

TEST_CASE("glyph corpus covers all classes with values in range") {
  const auto d = data::make_glyph_corpus(15, 29);
  CHECK(d.size() == 150);
  CHECK(d.x.minCoeff() >= 0.0f);
  CHECK(d.x.maxCoeff() <= 1.0f);
  std::set<int> classes(d.labels.begin(), d.labels.end());
  CHECK(classes.size() == 10);
}

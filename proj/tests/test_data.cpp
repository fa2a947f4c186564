#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "oracles.hpp"

using namespace usseg;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("usseg_data_" + std::to_string(::testing::UnitTest::GetInstance()->random_seed()) +
                                        "_" + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

void write_text(const std::string& path, const std::string& text) { std::ofstream(path) << text; }

void write_blank_pgm(const std::string& path, std::size_t H, std::size_t W) {
  GrayImage g{H, W, std::vector<std::uint8_t>(H * W, 40)};
  write_pgm(path, g);
}

std::size_t oracle_count(const std::vector<Point>& poly, std::size_t H, std::size_t W) {
  std::size_t n = 0;
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) n += oracle::inside(poly, double(x) + 0.5, double(y) + 0.5);
  return n;
}

}  // namespace

TEST(Raster, Examples) {
  const auto full = rasterize_polygon({{0, 0}, {8, 0}, {8, 6}, {0, 6}}, 6, 8);
  EXPECT_EQ(full.area(), 48u);
  const std::vector<Point> tri{{0, 0}, {4, 0}, {0, 4}};
  EXPECT_EQ(rasterize_polygon(tri, 8, 8).area(), oracle_count(tri, 8, 8));
  EXPECT_EQ(rasterize_polygon(tri, 8, 8).area(), 6u);  // centers strictly below the hypotenuse: 3 + 2 + 1
  EXPECT_EQ(rasterize_polygon({{1, 1}, {3, 3}, {5, 5}}, 8, 8).area(), 0u);
  EXPECT_THROW(rasterize_polygon({{1, 1}, {3, 3}}, 8, 8), DataError);
}

TEST(Raster, MatchesPointInPolygonOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t H = std::size_t(rng.uniform_int(5, 30)), W = std::size_t(rng.uniform_int(5, 30));
    std::vector<Point> poly;
    const int n = rng.uniform_int(3, 9);
    for (int i = 0; i < n; ++i) poly.push_back({rng.uniform(-3, double(W) + 3), rng.uniform(-3, double(H) + 3)});
    if (trial % 4 == 0)  // vertices on pixel centers and edges
      for (auto& p : poly) p = {std::round(p.x * 2) / 2, std::round(p.y * 2) / 2};
    const auto m = rasterize_polygon(poly, H, W);
    for (std::size_t y = 0; y < H; ++y)
      for (std::size_t x = 0; x < W; ++x)
        ASSERT_EQ(m.at(y, x) != 0, oracle::inside(poly, double(x) + 0.5, double(y) + 0.5))
            << "trial " << trial << " pixel " << x << "," << y;
  }
}

TEST(Labelme, SquareArtery) {
  TempDir d;
  write_blank_pgm(d.file("a.pgm"), 20, 30);
  write_text(d.file("a.json"), R"({"shapes":[{"label":"artery","points":[[2,3],[12,3],[12,13],[2,13]]}],
                                   "imageHeight":20,"imageWidth":30,"imagePath":"a.pgm"})");
  const auto img = load_labelme(d.file("a.json"));
  EXPECT_EQ(img.id, "a");
  EXPECT_EQ(img.image.shape(), (Shape{1, 1, 20, 30}));
  ASSERT_EQ(img.instances.size(), 1u);
  EXPECT_EQ(img.instances[0].label, 4);
  EXPECT_EQ(img.instances[0].mask.area(), oracle_count(img.instances[0].polygon, 20, 30));
  EXPECT_EQ(img.instances[0].mask.area(), 100u);
  EXPECT_EQ(img.instances[0].box, (Box{2, 3, 12, 13}));
}

TEST(Labelme, NoShapesAndDefaultImageName) {
  TempDir d;
  write_blank_pgm(d.file("b.pgm"), 8, 8);
  write_text(d.file("b.json"), R"({"shapes":[],"imageHeight":8,"imageWidth":8})");
  const auto img = load_labelme(d.file("b.json"));
  EXPECT_TRUE(img.instances.empty());
  EXPECT_FLOAT_EQ(img.image[0], 40.0f / 255.0f);
}

TEST(Labelme, Errors) {
  TempDir d;
  write_blank_pgm(d.file("c.pgm"), 8, 8);
  write_text(d.file("bone.json"),
             R"({"shapes":[{"label":"bone","points":[[0,0],[4,0],[4,4]]}],"imageHeight":8,"imageWidth":8,"imagePath":"c.pgm"})");
  try {
    load_labelme(d.file("bone.json"));
    FAIL() << "accepted an unknown label";
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("nerve, muscle, vein, artery"), std::string::npos) << e.what();
  }
  write_text(d.file("two.json"),
             R"({"shapes":[{"label":"vein","points":[[0,0],[4,0]]}],"imageHeight":8,"imageWidth":8,"imagePath":"c.pgm"})");
  EXPECT_THROW(load_labelme(d.file("two.json")), DataError);
  write_text(d.file("nofield.json"), R"({"shapes":[],"imageWidth":8,"imagePath":"c.pgm"})");
  try {
    load_labelme(d.file("nofield.json"));
    FAIL() << "accepted a file without imageHeight";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("imageHeight"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("nofield.json"), std::string::npos);
  }
  write_text(d.file("garbage.json"), "{not json");
  EXPECT_THROW(load_labelme(d.file("garbage.json")), ParseError);
  write_text(d.file("size.json"), R"({"shapes":[],"imageHeight":9,"imageWidth":8,"imagePath":"c.pgm"})");
  EXPECT_THROW(load_labelme(d.file("size.json")), DataError);
  EXPECT_THROW(load_labelme(d.file("missing.json")), DataError);
}

TEST(Labelme, SaveLoadRoundTrip) {
  TempDir d;
  SynthOptions opts;
  opts.height = opts.width = 64;
  const auto corpus = synth_generate(opts, 3);
  for (const auto& a : corpus) save_labelme(a, d.path.string());
  const auto back = load_dataset(d.path.string());
  ASSERT_EQ(back.size(), corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(back[i].id, corpus[i].id);
    EXPECT_EQ(back[i].group, corpus[i].group);
    ASSERT_EQ(back[i].instances.size(), corpus[i].instances.size());
    for (std::size_t k = 0; k < corpus[i].instances.size(); ++k) {
      const auto& a = corpus[i].instances[k];
      const auto& b = back[i].instances[k];
      EXPECT_EQ(a.label, b.label);
      EXPECT_EQ(a.mask, b.mask);
      EXPECT_EQ(a.box, b.box);
      ASSERT_EQ(a.polygon.size(), b.polygon.size());
      for (std::size_t p = 0; p < a.polygon.size(); ++p) {
        EXPECT_NEAR(a.polygon[p].x, b.polygon[p].x, 1e-6);
        EXPECT_NEAR(a.polygon[p].y, b.polygon[p].y, 1e-6);
      }
    }
    for (std::size_t p = 0; p < corpus[i].image.numel(); ++p)
      ASSERT_NEAR(back[i].image[p], corpus[i].image[p], 0.5 / 255.0 + 1e-7);
  }
  // a second save of the loaded corpus is byte-identical on the annotation side
  TempDir e;
  for (const auto& a : back) save_labelme(a, e.path.string());
  for (const auto& a : back) {
    std::ifstream x(d.path / (a.id + ".json")), y(e.path / (a.id + ".json"));
    std::string sx((std::istreambuf_iterator<char>(x)), {}), sy((std::istreambuf_iterator<char>(y)), {});
    EXPECT_EQ(sx, sy);
  }
}

TEST(ImageIo, PgmRoundTripAndErrors) {
  TempDir d;
  GrayImage g{3, 5, {}};
  for (int i = 0; i < 15; ++i) g.pixels.push_back(std::uint8_t(i * 17));
  write_pgm(d.file("g.pgm"), g);
  const auto back = read_pgm(d.file("g.pgm"));
  EXPECT_EQ(back.height, 3u);
  EXPECT_EQ(back.width, 5u);
  EXPECT_EQ(back.pixels, g.pixels);
  write_text(d.file("bad.pgm"), "P2\n2 2\n255\n0 0 0 0\n");
  EXPECT_THROW(read_pgm(d.file("bad.pgm")), ParseError);
  write_text(d.file("short.pgm"), "P5\n4 4\n255\nab");
  EXPECT_THROW(read_pgm(d.file("short.pgm")), ParseError);
}

TEST(Resize, SameSizeUnchanged) {
  SynthOptions opts;
  opts.height = opts.width = 64;
  const auto a = synth_generate(opts, 1)[0];
  const auto b = resize_sample(a, 64, 64);
  EXPECT_EQ(a.image, b.image);
  ASSERT_EQ(a.instances.size(), b.instances.size());
  for (std::size_t i = 0; i < a.instances.size(); ++i) EXPECT_EQ(a.instances[i].mask, b.instances[i].mask);
}

TEST(Resize, DoublingScalesBoxesAndAreas) {
  SynthOptions opts;
  opts.height = opts.width = 80;
  std::size_t blobs = 0;
  for (const auto& a : synth_generate(opts, 6)) {
    const auto b = resize_sample(a, 160, 160);
    EXPECT_EQ(b.image.shape(), (Shape{1, 1, 160, 160}));
    for (std::size_t i = 0; i < a.instances.size(); ++i) {
      const Box& x = a.instances[i].box;
      const Box& y = b.instances[i].box;
      EXPECT_EQ(y, (Box{2 * x.x1, 2 * x.y1, 2 * x.x2, 2 * x.y2}));
      EXPECT_EQ(b.instances[i].polygon[0].x, 2 * a.instances[i].polygon[0].x);
      const double area = double(a.instances[i].mask.area());
      if (area >= 100) {
        ++blobs;
        const double ratio = double(b.instances[i].mask.area()) / area;
        EXPECT_GE(ratio, 3.6);
        EXPECT_LE(ratio, 4.4);
      }
    }
  }
  EXPECT_GT(blobs, 10u);
}

TEST(Resize, NearestMaskAndDetectionRescale) {
  BinaryMask m(2, 2);
  m.at(0, 1) = 1;
  const auto r = resize_mask(m, 4, 4);
  EXPECT_EQ(r.area(), 4u);
  EXPECT_EQ(r.at(0, 2), 1);
  EXPECT_EQ(r.at(1, 3), 1);
  Detection d{1, 0.9f, Box{1, 0, 2, 1}, m};
  const auto out = rescale_detections({d}, 6, 8);
  EXPECT_EQ(out[0].box, (Box{4, 0, 8, 3}));
  EXPECT_EQ(out[0].mask.height, 6u);
  EXPECT_EQ(out[0].mask.width, 8u);
}

TEST(Synth, Reproducible) {
  SynthOptions opts;
  opts.height = opts.width = 96;
  const auto a = synth_generate(opts, 4), b = synth_generate(opts, 4);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].image, b[i].image);
    EXPECT_EQ(a[i].id, b[i].id);
    ASSERT_EQ(a[i].instances.size(), b[i].instances.size());
    for (std::size_t k = 0; k < a[i].instances.size(); ++k) EXPECT_EQ(a[i].instances[k].polygon, b[i].instances[k].polygon);
  }
  opts.seed = 2;
  EXPECT_FALSE(synth_generate(opts, 1)[0].image == a[0].image);
}

TEST(Synth, CountsAndConsistency) {
  SynthOptions opts;
  opts.height = opts.width = 128;
  opts.counts = {{{1, 1}, {0, 1}, {1, 1}, {0, 0}}};
  for (const auto& a : synth_generate(opts, 10)) {
    int nerves = 0, arteries = 0;
    for (const auto& inst : a.instances) {
      nerves += inst.label == 1;
      arteries += inst.label == 4;
      ASSERT_TRUE(inst.mask.bounding_box().has_value());
      EXPECT_EQ(*inst.mask.bounding_box(), inst.box);
      EXPECT_EQ(inst.mask, rasterize_polygon(inst.polygon, 128, 128));
      EXPECT_GE(inst.polygon.size(), 3u);
    }
    EXPECT_EQ(nerves, 1);
    EXPECT_EQ(arteries, 0);
    for (float v : a.image.vec()) {
      EXPECT_GE(v, 0.0f);
      EXPECT_LE(v, 1.0f);
    }
  }
}

TEST(Synth, RejectsInvalidSpec) {
  SynthOptions opts;
  opts.height = 8;
  EXPECT_THROW(synth_generate(opts, 1), ArgumentError);
  opts.height = 64;
  opts.speckle = 1.5;
  EXPECT_THROW(synth_generate(opts, 1), ArgumentError);
}

TEST(Split, ByGroup) {
  std::vector<AnnotatedImage> corpus;
  for (int g = 0; g < 10; ++g)
    for (int f = 0; f < 3; ++f) {
      AnnotatedImage a;
      a.id = std::to_string(g) + "_" + std::to_string(f);
      a.group = g;
      corpus.push_back(a);
    }
  const auto s = split_dataset(corpus, 0.8, 5);
  std::set<int> tr, te;
  for (const auto& a : s.train) tr.insert(a.group);
  for (const auto& a : s.test) te.insert(a.group);
  EXPECT_EQ(tr.size(), 8u);
  EXPECT_EQ(te.size(), 2u);
  EXPECT_EQ(s.train.size() + s.test.size(), corpus.size());
  for (int g : tr) EXPECT_FALSE(te.count(g));
  const auto again = split_dataset(corpus, 0.8, 5);
  ASSERT_EQ(again.test.size(), s.test.size());
  for (std::size_t i = 0; i < s.test.size(); ++i) EXPECT_EQ(again.test[i].id, s.test[i].id);
  EXPECT_THROW(split_dataset(corpus, 0.0, 1), ArgumentError);
  EXPECT_THROW(split_dataset(corpus, 1.0, 1), ArgumentError);
}

TEST(Synth, GroupsShareLayout) {
  SynthOptions opts;
  opts.height = opts.width = 64;
  opts.frames_per_group = 2;
  const auto c = synth_generate(opts, 4);
  EXPECT_EQ(c[0].group, c[1].group);
  EXPECT_NE(c[1].group, c[2].group);
}

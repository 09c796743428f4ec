// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include "gle/dataset.hpp"
#include "gle/error.hpp"
#include "oracles.hpp"

using namespace gle;

namespace {

std::array<std::size_t, 3> category_counts(const std::vector<SyntheticItem>& items) {
  std::array<std::size_t, 3> c{};
  for (const auto& it : items) ++c[static_cast<std::size_t>(it.annotation.category)];
  return c;
}

LandmarkAnnotation single_point(Category cat, std::size_t slot, Point p) {
  LandmarkAnnotation a;
  a.image_id = "probe";
  a.category = cat;
  a.bbox = {0, 0, 64, 64};
  a.landmarks[slot] = {p, Visibility::visible};
  return a;
}

RgbImage gradient_image(std::size_t w, std::size_t h) {
  RgbImage img(w, h);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      auto* px = img.at(x, y);
      px[0] = static_cast<std::uint8_t>((x * 7) % 256);
      px[1] = static_cast<std::uint8_t>((y * 11) % 256);
      px[2] = static_cast<std::uint8_t>((x + y) % 256);
    }
  return img;
}

}  // namespace

TEST_CASE("slot presence per category") {
  CHECK(landmarks_for(Category::full_body) == 8);
  CHECK(landmarks_for(Category::upper) == 6);
  CHECK(landmarks_for(Category::lower) == 4);
  CHECK_FALSE(slot_present(Category::upper, 4));
  CHECK_FALSE(slot_present(Category::upper, 5));
  CHECK_FALSE(slot_present(Category::lower, 0));
  CHECK_FALSE(slot_present(Category::lower, 3));
  CHECK(slot_present(Category::lower, 7));
  CHECK(kSlotNames[4] == "L.Waistline");
}

TEST_CASE("synthetic generation is deterministic per seed") {
  const auto a = generate_synthetic_dataset(12, 64, 7, {});
  const auto b = generate_synthetic_dataset(12, 64, 7, {});
  const auto c = generate_synthetic_dataset(12, 64, 8, {});
  REQUIRE(a.size() == 12);
  bool all_same = true, any_diff = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_same = all_same && a[i].image == b[i].image && a[i].annotation == b[i].annotation;
    any_diff = any_diff || !(a[i].image == c[i].image);
  }
  CHECK(all_same);
  CHECK(any_diff);
}

TEST_CASE("upper-body garments never carry waistline slots") {
  const auto items = generate_synthetic_dataset(30, 64, 3, {0.0, 1.0, 0.0});
  for (const auto& it : items) {
    CHECK(it.annotation.category == Category::upper);
    CHECK(it.annotation.landmarks[4].visibility == Visibility::absent);
    CHECK(it.annotation.landmarks[5].visibility == Visibility::absent);
  }
}

TEST_CASE("category mix is stratified") {
  const CategoryMix mix{0.4, 0.4, 0.2};
  const auto want = stratified_counts(1000, mix);
  CHECK(want == std::array<std::size_t, 3>{400, 400, 200});
  const auto got = category_counts(generate_synthetic_dataset(1000, 32, 11, mix));
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(got[k] + 1 >= want[k]);
    CHECK(got[k] <= want[k] + 1);
  }
  const auto odd = stratified_counts(10, {1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0});
  CHECK(odd[0] + odd[1] + odd[2] == 10);
  CHECK_THROWS_AS(stratified_counts(10, {0.5, 0.6, 0.0}), Error);
  CHECK_THROWS_AS(stratified_counts(10, {-0.1, 0.6, 0.5}), Error);
}

TEST_CASE("synthetic annotations satisfy the schema for many seeds") {
  std::size_t visible = 0;
  for (std::uint64_t seed = 0; seed < 1000; ++seed) {
    const auto items = generate_synthetic_dataset(1, 32, seed, {}, {0.2});
    const auto& it = items.front();
    CHECK(it.image.width == 32);
    CHECK(it.image.height == 32);
    CHECK_NOTHROW(validate_annotation(it.annotation, "seed"));
    CHECK_NOTHROW(validate_bounds(it.annotation, 32, 32, "seed"));
    const BBox& b = it.annotation.bbox;
    CHECK(b.x0 >= 0.0);
    CHECK(b.y0 >= 0.0);
    CHECK(b.x1 <= 32.0);
    CHECK(b.y1 <= 32.0);
    for (const auto& l : it.annotation.landmarks) visible += l.visibility == Visibility::visible ? 1 : 0;
  }
  CHECK(visible > 0);
}

TEST_CASE("occlusion rate marks present slots occluded") {
  const auto clean = generate_synthetic_dataset(50, 32, 5, {});
  for (const auto& it : clean)
    for (const auto& l : it.annotation.landmarks) CHECK(l.visibility != Visibility::occluded);
  const auto hidden = generate_synthetic_dataset(50, 32, 5, {}, {1.0});
  for (const auto& it : hidden)
    for (const auto& l : it.annotation.landmarks) CHECK(l.visibility != Visibility::visible);
}

TEST_CASE("generator preconditions") {
  CHECK_THROWS_WITH_AS(generate_synthetic_dataset(4, 16, 0, {}), doctest::Contains("image_size too small"), Error);
  CHECK_NOTHROW(generate_synthetic_dataset(1, kMinSyntheticSize, 0, {}));
  CHECK_THROWS_AS(generate_synthetic_dataset(0, 64, 0, {}), Error);
}

TEST_CASE("annotation text round trip") {
  const auto items = generate_synthetic_dataset(9, 48, 21, {}, {0.3});
  std::vector<LandmarkAnnotation> list;
  for (const auto& it : items) list.push_back(it.annotation);
  const std::string text = format_annotations(list);
  CHECK(parse_annotations(text, "mem") == list);
  CHECK(format_annotations(parse_annotations(text, "mem")) == text);

  const std::string dir = oracle::scratch_dir("annotations");
  const std::string path = dir + "/a.txt";
  save_annotations(path, list);
  CHECK(load_annotations(path) == list);
}

TEST_CASE("golden annotation example parses") {
  const auto list = load_annotations(GLE_DOCS_DIR "/annotation_example.txt");
  REQUIRE(list.size() == 3);
  CHECK(list[0].image_id == "img_0001");
  CHECK(list[0].category == Category::full_body);
  CHECK(list[0].bbox == BBox{10, 8, 110, 150});
  CHECK(list[0].landmarks[3].visibility == Visibility::occluded);
  CHECK(list[0].landmarks[7].position == Point{82, 140});
  CHECK(list[1].category == Category::upper);
  CHECK(list[1].landmarks[4].visibility == Visibility::absent);
  CHECK(list[2].category == Category::lower);
  CHECK(list[2].landmarks[0].visibility == Visibility::absent);
  CHECK(list[2].landmarks[6].position == Point{12, 95});
}

TEST_CASE("malformed annotation rows name the row and slot") {
  const std::string header = "glefmt v1\n";
  // upper garment with a visible waistline
  const std::string bad_slot =
      header + "u,upper,0,0,10,10,1,1,0,2,1,0,1,2,0,2,2,0,3,3,0,4,4,2,5,5,0,6,5,0\n";
  CHECK_THROWS_WITH_AS(parse_annotations(bad_slot, "f.txt"),
                       doctest::Contains("f.txt:2: slot L.Waistline"), Error);

  const std::string bad_vis =
      header + "\nu,full_body,0,0,10,10,1,1,0,2,1,0,1,2,0,2,2,0,3,3,0,4,4,7,5,5,0,6,5,0\n";
  CHECK_THROWS_WITH_AS(parse_annotations(bad_vis, "f.txt"),
                       doctest::Contains("f.txt:3 R.Waistline"), Error);

  CHECK_THROWS_WITH_AS(parse_annotations(header + "a,full_body,0,0\n", "f.txt"),
                       doctest::Contains("f.txt:2: expected 30 fields, got 4"), Error);
  CHECK_THROWS_WITH_AS(parse_annotations("a,b\n", "f.txt"), doctest::Contains("expected header"), Error);
  CHECK_THROWS_AS(parse_annotations("", "f.txt"), Error);
  CHECK_THROWS_WITH_AS(
      parse_annotations(header + "a,jacket,0,0,10,10,1,1,0,2,1,0,1,2,0,2,2,0,3,3,0,4,4,0,5,5,0,6,5,0\n", "f.txt"),
      doctest::Contains("f.txt:2"), Error);
  CHECK_THROWS_WITH_AS(
      parse_annotations(header + "a,full_body,0,0,0,10,1,1,0,2,1,0,1,2,0,2,2,0,3,3,0,4,4,0,5,5,0,6,5,0\n", "f.txt"),
      doctest::Contains("degenerate bbox"), Error);
  try {
    parse_annotations(bad_slot, "f.txt");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::format);
  }
}

TEST_CASE("visible landmarks outside the image are rejected") {
  LandmarkAnnotation a = single_point(Category::full_body, 0, {64.0, 3.0});
  CHECK_THROWS_WITH_AS(validate_bounds(a, 64, 64, "img"), doctest::Contains("L.Collar"), Error);
  a.landmarks[0].position.x = 63.0;
  CHECK_NOTHROW(validate_bounds(a, 64, 64, "img"));
}

TEST_CASE("crop and resize: identity") {
  const RgbImage img = gradient_image(40, 40);
  const auto r = crop_and_resize(img, full_image_bbox(img), 40);
  CHECK(r.transform.scale_x == 1.0);
  CHECK(r.transform.offset_x == 0.0);
  REQUIRE(r.image.shape() == Shape{3, 40, 40});
  bool exact = true;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t y = 0; y < 40; ++y)
      for (std::size_t x = 0; x < 40; ++x)
        exact = exact && r.image[(c * 40 + y) * 40 + x] == img.at(x, y)[c] / 255.0;
  CHECK(exact);
}

TEST_CASE("crop and resize: scaling and offsets") {
  const RgbImage img = gradient_image(200, 150);
  const auto r = crop_and_resize(img, {0, 0, 100, 100}, 224);
  CHECK(r.transform.scale_x == doctest::Approx(2.24).epsilon(1e-12));
  CHECK(r.transform.scale_y == doctest::Approx(2.24).epsilon(1e-12));
  const Point m = r.transform.apply({50, 50});
  CHECK(m.x == doctest::Approx(112.0).epsilon(1e-12));
  CHECK(m.y == doctest::Approx(112.0).epsilon(1e-12));

  const auto shifted = crop_and_resize(img, {20, 30, 120, 110}, 64);
  const Point corner = shifted.transform.apply({20, 30});
  CHECK(std::abs(corner.x) < 1e-12);
  CHECK(std::abs(corner.y) < 1e-12);

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 500; ++i) {
    const double x0 = 100 * u(rng), y0 = 70 * u(rng);
    const BBox b{x0, y0, x0 + 5 + 95 * u(rng), y0 + 5 + 75 * u(rng)};
    const auto t = crop_and_resize(img, b, 32).transform;
    const Point p{b.x0 + b.width() * u(rng), b.y0 + b.height() * u(rng)};
    const Point q = t.invert(t.apply(p));
    CHECK(std::hypot(q.x - p.x, q.y - p.y) < 0.5);
  }
}

TEST_CASE("crop and resize: degenerate input") {
  const RgbImage img = gradient_image(20, 20);
  CHECK_THROWS_WITH_AS(crop_and_resize(img, {5, 5, 5, 10}, 32), doctest::Contains("degenerate bbox"), Error);
  CHECK_THROWS_AS(crop_and_resize(img, {0, 0, 10, 10}, 0), Error);
  CHECK_THROWS_AS(crop_and_resize(img, {30, 30, 40, 40}, 8), Error);
}

TEST_CASE("target heatmaps") {
  const auto t = render_target_heatmaps(single_point(Category::full_body, 2, {10, 10}), {}, 32, 2.0);
  const Tensor& m = t.heatmaps.maps;
  REQUIRE(m.shape() == Shape{8, 32, 32});
  const std::size_t plane = 32 * 32, base = 2 * plane;
  CHECK(m[base + 10 * 32 + 10] == 1.0);
  CHECK(m[base + 11 * 32 + 10] == doctest::Approx(std::exp(-0.125)).epsilon(1e-15));
  CHECK(m[base + 10 * 32 + 12] == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(t.mask[2]);
  CHECK_FALSE(t.mask[0]);
  double other = 0.0;
  for (std::size_t i = 0; i < m.numel(); ++i)
    if (i < base || i >= base + plane) other += std::abs(m[i]);
  CHECK(other == 0.0);

  // fractional positions round to the nearest pixel
  const auto r = render_target_heatmaps(single_point(Category::full_body, 0, {3.5, 7.4}), {}, 16, 1.0);
  CHECK(r.heatmaps.maps[7 * 16 + 4] == 1.0);
  CHECK(r.gt_coords[0] == Point{3.5, 7.4});

  CHECK_THROWS_AS(render_target_heatmaps(single_point(Category::full_body, 0, {1, 1}), {}, 16, 0.0), Error);
}

TEST_CASE("heatmap channels are independent") {
  LandmarkAnnotation a = single_point(Category::full_body, 1, {4, 5});
  const auto one = render_target_heatmaps(a, {}, 24, 1.5);
  a.landmarks[6] = {{20, 18}, Visibility::visible};
  a.landmarks[7] = {{2, 2}, Visibility::occluded};
  const auto two = render_target_heatmaps(a, {}, 24, 1.5);
  const std::size_t plane = 24 * 24;
  bool same = true, occluded_zero = true;
  for (std::size_t i = 0; i < plane; ++i) {
    same = same && one.heatmaps.maps[plane + i] == two.heatmaps.maps[plane + i];
    occluded_zero = occluded_zero && two.heatmaps.maps[7 * plane + i] == 0.0;
  }
  CHECK(same);
  CHECK(occluded_zero);
  CHECK_FALSE(two.mask[7]);
  CHECK(two.gt_coords[7] == Point{2, 2});
}

TEST_CASE("sample peaks sit on the transformed ground truth") {
  const auto items = generate_synthetic_dataset(20, 96, 13, {});
  for (const auto& it : items) {
    const Sample s = make_sample(it.image, it.annotation, 64, default_sigma(64), CropMode::bbox);
    REQUIRE(s.image.shape() == Shape{3, 64, 64});
    for (std::size_t k = 0; k < kNumLandmarks; ++k) {
      if (!s.mask[k]) continue;
      const std::size_t px = static_cast<std::size_t>(std::clamp(std::floor(s.gt_coords[k].x + 0.5), 0.0, 63.0));
      const std::size_t py = static_cast<std::size_t>(std::clamp(std::floor(s.gt_coords[k].y + 0.5), 0.0, 63.0));
      CHECK(s.target.maps[(k * 64 + py) * 64 + px] == 1.0);
    }
  }
}

TEST_CASE("crop mode names") {
  CHECK(parse_crop_mode("bbox") == CropMode::bbox);
  CHECK(parse_crop_mode("full_image") == CropMode::full_image);
  CHECK(to_string(CropMode::bbox) == "bbox");
  CHECK_THROWS_AS(parse_crop_mode("center"), Error);
}

TEST_CASE("ppm round trip and errors") {
  const RgbImage img = gradient_image(17, 9);
  const std::string bytes = encode_ppm(img);
  CHECK(bytes.rfind("P6", 0) == 0);
  CHECK(decode_ppm(bytes, "mem") == img);
  CHECK_THROWS_WITH_AS(decode_ppm("P3\n1 1\n255\n", "x.ppm"), doctest::Contains("x.ppm"), Error);
  CHECK_THROWS_AS(decode_ppm(bytes.substr(0, bytes.size() - 1), "x.ppm"), Error);
  CHECK_THROWS_AS(decode_ppm("P6\n2 2\n65535\n", "x.ppm"), Error);
}

TEST_CASE("dataset directory round trip") {
  const auto items = generate_synthetic_dataset(5, 40, 99, {}, {0.25});
  const std::string dir = oracle::scratch_dir("dataset");
  write_dataset(dir, items);
  CHECK(std::filesystem::exists(dir + "/annotations.txt"));
  const Dataset d = load_dataset(dir);
  REQUIRE(d.annotations.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(d.annotations[i] == items[i].annotation);
    CHECK(d.images[i] == items[i].image);
  }
  const auto samples = prepare_samples(d, 32, 1.0, CropMode::full_image);
  REQUIRE(samples.size() == 5);
  CHECK(samples[0].image_id == items[0].annotation.image_id);

  std::filesystem::remove(dir + "/" + items[2].annotation.image_id + ".ppm");
  try {
    load_dataset(dir);
    FAIL("expected an io error");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::io);
  }
}

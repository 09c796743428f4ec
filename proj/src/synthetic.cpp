// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "gle/dataset.hpp"
#include "gle/error.hpp"
#include "gle/parallel.hpp"

namespace gle {
namespace {

struct Stroke {
  Point from, to;
  double radius;
};

// A garment in template space: x to the image left is negative, y grows
// downward, extent roughly [-1,1]^2.
struct Garment {
  std::vector<Point> polygon;
  std::vector<Stroke> strokes;
  std::array<Point, kNumLandmarks> landmarks{};
  Point hem_from, hem_to;  // darker hem band
};

using Rng = std::mt19937_64;

double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Point mirror(Point p) { return {-p.x, p.y}; }

Garment upper_template(Rng& rng) {
  auto j = [&](Point p) { return Point{p.x + uniform(rng, -0.05, 0.05), p.y + uniform(rng, -0.05, 0.05)}; };
  const Point neck = j({-0.22, -0.78}), shoulder = j({-0.52, -0.68}), armpit = j({-0.46, -0.30});
  const Point hem = j({-0.52, 0.80}), sleeve_root = j({-0.50, -0.52}), cuff = j({-0.92, -0.02});
  Garment g;
  g.polygon = {neck, shoulder, armpit, hem, mirror(hem), mirror(armpit), mirror(shoulder), mirror(neck)};
  const double r = uniform(rng, 0.11, 0.15);
  g.strokes = {{sleeve_root, cuff, r}, {mirror(sleeve_root), mirror(cuff), r}};
  g.landmarks[0] = neck;
  g.landmarks[1] = mirror(neck);
  g.landmarks[2] = cuff;
  g.landmarks[3] = mirror(cuff);
  g.landmarks[6] = hem;
  g.landmarks[7] = mirror(hem);
  g.hem_from = hem;
  g.hem_to = mirror(hem);
  return g;
}

Garment full_body_template(Rng& rng) {
  auto j = [&](Point p) { return Point{p.x + uniform(rng, -0.05, 0.05), p.y + uniform(rng, -0.05, 0.05)}; };
  const Point neck = j({-0.20, -0.92}), shoulder = j({-0.46, -0.82}), armpit = j({-0.40, -0.50});
  const Point waist = j({-0.32, -0.05}), hem = j({-0.72, 0.92});
  const Point sleeve_root = j({-0.44, -0.70}), cuff = j({-0.80, -0.28});
  Garment g;
  g.polygon = {neck, shoulder, armpit, waist, hem, mirror(hem), mirror(waist), mirror(armpit),
               mirror(shoulder), mirror(neck)};
  const double r = uniform(rng, 0.09, 0.13);
  g.strokes = {{sleeve_root, cuff, r}, {mirror(sleeve_root), mirror(cuff), r}};
  g.landmarks[0] = neck;
  g.landmarks[1] = mirror(neck);
  g.landmarks[2] = cuff;
  g.landmarks[3] = mirror(cuff);
  g.landmarks[4] = waist;
  g.landmarks[5] = mirror(waist);
  g.landmarks[6] = hem;
  g.landmarks[7] = mirror(hem);
  g.hem_from = hem;
  g.hem_to = mirror(hem);
  return g;
}

Garment lower_template(Rng& rng) {
  auto j = [&](Point p) { return Point{p.x + uniform(rng, -0.05, 0.05), p.y + uniform(rng, -0.05, 0.05)}; };
  const Point waist = j({-0.48, -0.80}), hem = j({-0.78, 0.82});
  Garment g;
  if (uniform(rng, 0.0, 1.0) < 0.5) {
    g.polygon = {waist, hem, mirror(hem), mirror(waist)};  // skirt
  } else {
    const Point inner = j({-0.10, 0.82}), crotch = j({0.0, -0.05});  // trousers
    g.polygon = {waist, hem, inner, crotch, mirror(inner), mirror(hem), mirror(waist)};
  }
  g.landmarks[4] = waist;
  g.landmarks[5] = mirror(waist);
  g.landmarks[6] = hem;
  g.landmarks[7] = mirror(hem);
  g.hem_from = hem;
  g.hem_to = mirror(hem);
  return g;
}

bool inside_polygon(const std::vector<Point>& poly, Point p) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point& a = poly[i];
    const Point& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

double segment_distance(Point p, Point a, Point b) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

struct Pose {
  double scale, cos_a, sin_a, cx, cy;
  Point apply(Point p) const {
    return {cx + scale * (cos_a * p.x - sin_a * p.y), cy + scale * (sin_a * p.x + cos_a * p.y)};
  }
};

void transform_garment(Garment& g, const Pose& pose) {
  for (auto& p : g.polygon) p = pose.apply(p);
  for (auto& s : g.strokes) {
    s.from = pose.apply(s.from);
    s.to = pose.apply(s.to);
    s.radius *= pose.scale;
  }
  for (auto& p : g.landmarks) p = pose.apply(p);
  g.hem_from = pose.apply(g.hem_from);
  g.hem_to = pose.apply(g.hem_to);
}

// Extent of all rendered geometry: {min_x, min_y, max_x, max_y}.
std::array<double, 4> extent(const Garment& g) {
  std::array<double, 4> e{1e300, 1e300, -1e300, -1e300};
  auto grow = [&](Point p, double r) {
    e[0] = std::min(e[0], p.x - r);
    e[1] = std::min(e[1], p.y - r);
    e[2] = std::max(e[2], p.x + r);
    e[3] = std::max(e[3], p.y + r);
  };
  for (const auto& p : g.polygon) grow(p, 0.0);
  for (const auto& s : g.strokes) {
    grow(s.from, s.radius);
    grow(s.to, s.radius);
  }
  return e;
}

std::array<double, 3> random_color(Rng& rng) {
  return {uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0), uniform(rng, 0.0, 1.0)};
}

double color_distance(const std::array<double, 3>& a, const std::array<double, 3>& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

SyntheticItem render_item(std::size_t index, Category category, std::size_t size,
                          std::uint64_t seed, const SyntheticOptions& options) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  Rng rng(seq);

  Garment g = category == Category::upper ? upper_template(rng)
              : category == Category::lower ? lower_template(rng)
                                            : full_body_template(rng);
  const double widen = uniform(rng, 0.85, 1.15);
  for (auto& p : g.polygon) p.x *= widen;
  for (auto& s : g.strokes) {
    s.from.x *= widen;
    s.to.x *= widen;
  }
  for (auto& p : g.landmarks) p.x *= widen;
  g.hem_from.x *= widen;
  g.hem_to.x *= widen;

  const double s = static_cast<double>(size);
  const double angle = uniform(rng, -0.3, 0.3);
  double scale = uniform(rng, 0.30, 0.44) * s;
  const double margin = 2.0;
  Garment placed;
  Pose pose{};
  for (;;) {
    pose = {scale, std::cos(angle), std::sin(angle), 0.0, 0.0};
    placed = g;
    transform_garment(placed, pose);
    const auto e = extent(placed);
    const double free_x = (s - 1.0 - 2.0 * margin) - (e[2] - e[0]);
    const double free_y = (s - 1.0 - 2.0 * margin) - (e[3] - e[1]);
    if (free_x >= 0.0 && free_y >= 0.0) {
      pose.cx = margin - e[0] + uniform(rng, 0.0, free_x);
      pose.cy = margin - e[1] + uniform(rng, 0.0, free_y);
      break;
    }
    scale *= 0.9;
  }
  placed = g;
  transform_garment(placed, pose);

  const auto background = random_color(rng);
  auto garment = random_color(rng);
  while (color_distance(background, garment) < 0.45) garment = random_color(rng);
  const double grad_x = uniform(rng, -0.15, 0.15), grad_y = uniform(rng, -0.15, 0.15);
  const double hem_band = std::max(1.0, 0.06 * pose.scale);

  SyntheticItem item;
  item.image = RgbImage(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const Point p{static_cast<double>(x), static_cast<double>(y)};
      bool on = inside_polygon(placed.polygon, p);
      for (const auto& st : placed.strokes) on = on || segment_distance(p, st.from, st.to) <= st.radius;
      std::array<double, 3> c;
      if (on) {
        const double shade = segment_distance(p, placed.hem_from, placed.hem_to) < hem_band ? 0.6 : 1.0;
        for (int k = 0; k < 3; ++k) c[k] = garment[k] * shade;
      } else {
        const double ramp = grad_x * (p.x / s - 0.5) + grad_y * (p.y / s - 0.5);
        for (int k = 0; k < 3; ++k) c[k] = background[k] + ramp;
      }
      std::uint8_t* px = item.image.at(x, y);
      for (int k = 0; k < 3; ++k) {
        const double v = std::clamp(c[k] + uniform(rng, -0.06, 0.06), 0.0, 1.0);
        px[k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
    }
  }

  LandmarkAnnotation& a = item.annotation;
  char id[32];
  std::snprintf(id, sizeof(id), "img_%06zu", index);
  a.image_id = id;
  a.category = category;
  const auto e = extent(placed);
  a.bbox = {std::max(0.0, std::floor(e[0])), std::max(0.0, std::floor(e[1])),
            std::min(s, std::ceil(e[2]) + 1.0), std::min(s, std::ceil(e[3]) + 1.0)};
  for (std::size_t i = 0; i < kNumLandmarks; ++i) {
    Landmark& l = a.landmarks[i];
    if (!slot_present(category, i)) {
      l = Landmark{};
      continue;
    }
    l.position = placed.landmarks[i];
    l.visibility = uniform(rng, 0.0, 1.0) < options.occlusion_rate ? Visibility::occluded
                                                                   : Visibility::visible;
  }
  return item;
}

}  // namespace

std::array<std::size_t, 3> stratified_counts(std::size_t n, const CategoryMix& mix) {
  const std::array<double, 3> p{mix.full_body, mix.upper, mix.lower};
  for (double v : p) {
    if (!(v >= 0.0)) fail(ErrorKind::precondition, "category proportions must be non-negative");
  }
  if (std::abs(p[0] + p[1] + p[2] - 1.0) > 1e-9) {
    fail(ErrorKind::precondition, "category proportions must sum to 1");
  }
  std::array<std::size_t, 3> counts{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < 3; ++i) {
    const double exact = p[i] * static_cast<double>(n);
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    rem[i] = exact - static_cast<double>(counts[i]);
    assigned += counts[i];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 3]];
  return counts;
}

std::vector<SyntheticItem> generate_synthetic_dataset(std::size_t n, std::size_t image_size,
                                                      std::uint64_t seed, const CategoryMix& mix,
                                                      const SyntheticOptions& options) {
  if (image_size < kMinSyntheticSize) {
    fail(ErrorKind::precondition, "image_size too small: " + std::to_string(image_size) +
                                      " < " + std::to_string(kMinSyntheticSize));
  }
  if (n < 1) fail(ErrorKind::precondition, "dataset size n must be at least 1");
  const auto counts = stratified_counts(n, mix);
  std::vector<Category> categories;
  const Category kinds[] = {Category::full_body, Category::upper, Category::lower};
  for (std::size_t i = 0; i < 3; ++i) categories.insert(categories.end(), counts[i], kinds[i]);
  Rng shuffle_rng(seed ^ 0x5eed5eed5eed5eedULL);
  std::shuffle(categories.begin(), categories.end(), shuffle_rng);

  std::vector<SyntheticItem> items(n);
  parallel_for(n, [&](std::size_t i) { items[i] = render_item(i, categories[i], image_size, seed, options); });
  return items;
}

}  // namespace gle

#include "fndet/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace fndet {

namespace fs = std::filesystem;

// ------------------------------------------------------------- YOLO text --

namespace {

std::string num(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

double parse_field(const std::string& tok, int line) {
  double v = 0;
  auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc{} || res.ptr != tok.data() + tok.size()) throw ParseError("bad number '" + tok + "'", line);
  return v;
}

}  // namespace

std::vector<GroundTruth> parse_yolo_txt(std::istream& is) {
  std::vector<GroundTruth> out;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<std::string> tok;
    std::string t;
    while (ls >> t) tok.push_back(t);
    if (tok.empty()) continue;
    if (tok.size() != 5) throw ParseError("expected 'class cx cy w h'", line_no);
    const double cls = parse_field(tok[0], line_no);
    if (cls < 0 || cls != std::floor(cls)) throw ParseError("class id must be a nonnegative integer", line_no);
    GroundTruth g{static_cast<int>(cls), parse_field(tok[1], line_no), parse_field(tok[2], line_no),
                  parse_field(tok[3], line_no), parse_field(tok[4], line_no)};
    if (!(g.cx >= 0 && g.cx <= 1 && g.cy >= 0 && g.cy <= 1)) throw ParseError("box center outside [0, 1]", line_no);
    if (!(g.w > 0 && g.w <= 1 && g.h > 0 && g.h <= 1)) throw ParseError("box size outside (0, 1]", line_no);
    out.push_back(g);
  }
  return out;
}

std::vector<GroundTruth> load_yolo_txt(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  return parse_yolo_txt(is);
}

void write_yolo_txt(std::ostream& os, const std::vector<GroundTruth>& gts) {
  for (const auto& g : gts) os << g.class_id << ' ' << num(g.cx) << ' ' << num(g.cy) << ' ' << num(g.w) << ' ' << num(g.h) << '\n';
}

void save_yolo_txt(const std::string& path, const std::vector<GroundTruth>& gts) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  write_yolo_txt(os, gts);
}

// ------------------------------------------------------------------- PPM --

namespace {

int read_header_int(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string skip;
      std::getline(is, skip);
    } else if (std::isspace(c)) {
      is.get();
    } else {
      break;
    }
  }
  int v = -1;
  if (!(is >> v)) throw ParseError("ppm: malformed header");
  return v;
}

}  // namespace

Tensor4 read_ppm(std::istream& is) {
  std::string magic(2, '\0');
  is.read(magic.data(), 2);
  if (!is || magic != "P6") throw ParseError("ppm: expected P6 magic");
  const int w = read_header_int(is);
  const int h = read_header_int(is);
  const int maxval = read_header_int(is);
  if (w < 1 || h < 1) throw ParseError("ppm: bad dimensions");
  if (maxval < 1 || maxval > 255) throw ParseError("ppm: only 8-bit maxval is supported");
  is.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (!is) throw ParseError("ppm: truncated raster");
  Tensor4 img({1, 3, h, w});
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) img.at(0, c, y, x) = raw[(static_cast<std::size_t>(y) * w + x) * 3 + c] / static_cast<double>(maxval);
    }
  }
  return img;
}

Tensor4 load_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path);
  return read_ppm(is);
}

void write_ppm(std::ostream& os, const Tensor4& image) {
  if (image.n() != 1) throw DimensionError("n", "ppm holds a single image");
  if (image.c() != 3) throw DimensionError("c", "ppm needs 3 channels");
  os << "P6\n" << image.w() << ' ' << image.h() << "\n255\n";
  std::vector<unsigned char> raw(static_cast<std::size_t>(image.w()) * image.h() * 3);
  for (int y = 0; y < image.h(); ++y) {
    for (int x = 0; x < image.w(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(image.at(0, c, y, x), 0.0, 1.0);
        raw[(static_cast<std::size_t>(y) * image.w() + x) * 3 + c] = static_cast<unsigned char>(std::lround(v * 255.0));
      }
    }
  }
  os.write(reinterpret_cast<const char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
}

void save_ppm(const std::string& path, const Tensor4& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot write " + path);
  write_ppm(os, image);
}

// ---------------------------------------------------------- augmentation --

namespace {

// Maps normalized output coordinates back to normalized source coordinates
// (and forward for boxes). All supported ops are axis-separable affines.
struct Affine1 {
  double a = 1, b = 0;  // forward: u' = a*u + b
  double fwd(double u) const { return a * u + b; }
  double inv(double u) const { return (u - b) / a; }
};

std::pair<Affine1, Affine1> affine_for(const AugmentOp& op, int w, int h) {
  switch (op.kind) {
    case AugmentKind::kScale:
      if (!(op.factor > 0)) throw ConfigError("scale factor must be > 0");
      return {{op.factor, 0.5 - 0.5 * op.factor}, {op.factor, 0.5 - 0.5 * op.factor}};
    case AugmentKind::kTranslate:
      return {{1.0, op.dx / w}, {1.0, op.dy / h}};
    case AugmentKind::kCrop: {
      const BBox& r = op.region;
      if (!(r.x1 >= 0 && r.y1 >= 0 && r.x2 <= 1 && r.y2 <= 1 && r.x2 > r.x1 && r.y2 > r.y1)) {
        throw ConfigError("crop region must be a non-empty box inside [0, 1]");
      }
      return {{1.0 / r.width(), -r.x1 / r.width()}, {1.0 / r.height(), -r.y1 / r.height()}};
    }
    default:
      return {};
  }
}

double sample_bilinear(const Tensor4& img, int c, double sx, double sy) {
  const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
  const double fx = sx - x0, fy = sy - y0;
  auto px = [&](int x, int y) {
    if (x < 0 || y < 0 || x >= img.w() || y >= img.h()) return 0.0;
    return img.at(0, c, y, x);
  };
  const double top = fx == 0 ? px(x0, y0) : px(x0, y0) * (1 - fx) + px(x0 + 1, y0) * fx;
  if (fy == 0) return top;
  const double bot = fx == 0 ? px(x0, y0 + 1) : px(x0, y0 + 1) * (1 - fx) + px(x0 + 1, y0 + 1) * fx;
  return top * (1 - fy) + bot * fy;
}

}  // namespace

Sample augment(const Sample& s, const AugmentOp& op, double min_visible) {
  const Tensor4& img = s.image;
  if (img.n() != 1 || img.c() != 3) throw DimensionError("c", "augment expects a single 3-channel image");
  const int w = img.w(), h = img.h();
  Sample out;
  out.id = s.id;
  out.image = Tensor4(img.shape());

  if (op.kind == AugmentKind::kHFlip || op.kind == AugmentKind::kVFlip) {
    const bool hor = op.kind == AugmentKind::kHFlip;
    for (int c = 0; c < 3; ++c) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          out.image.at(0, c, y, x) = hor ? img.at(0, c, y, w - 1 - x) : img.at(0, c, h - 1 - y, x);
        }
      }
    }
    for (GroundTruth g : s.gts) {
      (hor ? g.cx : g.cy) = 1.0 - (hor ? g.cx : g.cy);
      out.gts.push_back(g);
    }
    return out;
  }

  const auto [ax, ay] = affine_for(op, w, h);
  for (int y = 0; y < h; ++y) {
    const double sy = ay.inv((y + 0.5) / h) * h - 0.5;
    for (int x = 0; x < w; ++x) {
      const double sx = ax.inv((x + 0.5) / w) * w - 0.5;
      for (int c = 0; c < 3; ++c) out.image.at(0, c, y, x) = std::clamp(sample_bilinear(img, c, sx, sy), 0.0, 1.0);
    }
  }
  for (const GroundTruth& g : s.gts) {
    const double x1 = ax.fwd(g.cx - g.w / 2), x2 = ax.fwd(g.cx + g.w / 2);
    const double y1 = ay.fwd(g.cy - g.h / 2), y2 = ay.fwd(g.cy + g.h / 2);
    const double full = (x2 - x1) * (y2 - y1);
    const double cx1 = std::clamp(x1, 0.0, 1.0), cx2 = std::clamp(x2, 0.0, 1.0);
    const double cy1 = std::clamp(y1, 0.0, 1.0), cy2 = std::clamp(y2, 0.0, 1.0);
    const double vis = std::max(0.0, cx2 - cx1) * std::max(0.0, cy2 - cy1);
    if (!(full > 0) || vis <= 0 || vis < min_visible * full) continue;
    out.gts.push_back({g.class_id, (cx1 + cx2) / 2, (cy1 + cy2) / 2, cx2 - cx1, cy2 - cy1});
  }
  return out;
}

Sample random_augment(const Sample& s, const AugmentPolicy& policy, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  Sample cur = s;
  const int w = s.image.w(), h = s.image.h();
  if (u01(rng) < policy.p) cur = augment(cur, AugmentOp::hflip());
  if (u01(rng) < policy.p) cur = augment(cur, AugmentOp::vflip());
  if (u01(rng) < policy.p) {
    cur = augment(cur, AugmentOp::scale(policy.scale_min + (policy.scale_max - policy.scale_min) * u01(rng)));
  }
  if (u01(rng) < policy.p) {
    const double dx = std::round((2 * u01(rng) - 1) * policy.translate_max * w);
    const double dy = std::round((2 * u01(rng) - 1) * policy.translate_max * h);
    cur = augment(cur, AugmentOp::translate(dx, dy));
  }
  if (u01(rng) < policy.p) {
    const double side = policy.crop_min + (1.0 - policy.crop_min) * u01(rng);
    const double x0 = (1.0 - side) * u01(rng), y0 = (1.0 - side) * u01(rng);
    cur = augment(cur, AugmentOp::crop({x0, y0, x0 + side, y0 + side}));
  }
  return cur;
}

// ----------------------------------------------------------------- split --

Split split(std::vector<std::string> ids, const std::array<double, 3>& ratios, std::uint64_t seed) {
  double total = 0;
  for (double r : ratios) {
    if (!(r >= 0)) throw ConfigError("split ratios must be nonnegative");
    total += r;
  }
  if (!(total > 0)) throw ConfigError("split ratios must not all be zero");
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);

  const std::size_t n = ids.size();
  std::array<std::size_t, 3> count{};
  std::array<double, 3> frac{};
  std::size_t assigned = 0;
  for (int i = 0; i < 3; ++i) {
    const double exact = static_cast<double>(n) * ratios[i] / total;
    count[i] = static_cast<std::size_t>(std::floor(exact));
    frac[i] = exact - static_cast<double>(count[i]);
    assigned += count[i];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return frac[a] > frac[b]; });
  for (int k = 0; assigned < n; k = (k + 1) % 3) {
    if (ratios[order[k]] > 0) {
      ++count[order[k]];
      ++assigned;
    }
  }
  Split out;
  auto it = ids.begin();
  out.train.assign(it, it + static_cast<std::ptrdiff_t>(count[0]));
  it += static_cast<std::ptrdiff_t>(count[0]);
  out.val.assign(it, it + static_cast<std::ptrdiff_t>(count[1]));
  it += static_cast<std::ptrdiff_t>(count[1]);
  out.test.assign(it, ids.end());
  return out;
}

// ----------------------------------------------------------------- synth --

std::vector<Sample> synth_blobs(int n_images, int size, int max_objects, std::uint64_t seed) {
  if (n_images < 0 || size < 8 || max_objects < 0) throw ConfigError("synth_blobs: invalid arguments");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> noise(8, 40);
  std::uniform_int_distribution<int> bright(190, 255);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  const double min_axis = std::max(2.5, size * 0.05), max_axis = std::max(min_axis + 1, size * 0.2);

  std::vector<Sample> out;
  for (int i = 0; i < n_images; ++i) {
    Sample s;
    char id[32];
    std::snprintf(id, sizeof id, "blob_%05d", i);
    s.id = id;
    s.image = Tensor4({1, 3, size, size});
    for (double& v : s.image.data()) v = noise(rng) / 255.0;
    const int n_obj = max_objects == 0 ? 0 : 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_objects));
    std::vector<BBox> placed;
    for (int o = 0; o < n_obj; ++o) {
      for (int attempt = 0; attempt < 100; ++attempt) {
        const double a = min_axis + (max_axis - min_axis) * u01(rng);
        const double b = min_axis + (max_axis - min_axis) * u01(rng);
        const double ex = a + 1 + (size - 2 * a - 2) * u01(rng);
        const double ey = b + 1 + (size - 2 * b - 2) * u01(rng);
        // Tight pixel bounds of the rasterized ellipse.
        int x1 = size, y1 = size, x2 = -1, y2 = -1;
        std::vector<std::pair<int, int>> pix;
        for (int y = 0; y < size; ++y) {
          for (int x = 0; x < size; ++x) {
            const double nx = (x + 0.5 - ex) / a, ny = (y + 0.5 - ey) / b;
            if (nx * nx + ny * ny <= 1.0) {
              pix.emplace_back(x, y);
              x1 = std::min(x1, x);
              y1 = std::min(y1, y);
              x2 = std::max(x2, x);
              y2 = std::max(y2, y);
            }
          }
        }
        if (pix.empty()) continue;
        const BBox box{static_cast<double>(x1), static_cast<double>(y1), static_cast<double>(x2 + 1),
                       static_cast<double>(y2 + 1)};
        // Keep a one-pixel gap between objects.
        const BBox grown{box.x1 - 1, box.y1 - 1, box.x2 + 1, box.y2 + 1};
        if (std::any_of(placed.begin(), placed.end(), [&](const BBox& p) { return iou(p, grown) > 0; })) continue;
        const int col[3] = {bright(rng), bright(rng), bright(rng)};
        for (const auto& [x, y] : pix) {
          for (int c = 0; c < 3; ++c) s.image.at(0, c, y, x) = col[c] / 255.0;
        }
        placed.push_back(box);
        s.gts.push_back(GroundTruth::from_pixels(0, box, size, size));
        break;
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

// ---------------------------------------------------------------- layout --

void save_dataset(const std::string& root, const std::vector<Sample>& samples) {
  fs::create_directories(fs::path(root) / "images");
  fs::create_directories(fs::path(root) / "labels");
  for (const auto& s : samples) {
    save_ppm((fs::path(root) / "images" / (s.id + ".ppm")).string(), s.image);
    save_yolo_txt((fs::path(root) / "labels" / (s.id + ".txt")).string(), s.gts);
  }
}

std::vector<Sample> load_dataset(const std::string& root, const std::vector<std::string>& ids) {
  std::vector<std::string> names = ids;
  if (names.empty()) {
    const fs::path dir = fs::path(root) / "images";
    if (!fs::is_directory(dir)) throw Error("no images directory under " + root);
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.path().extension() == ".ppm") names.push_back(e.path().stem().string());
    }
    std::sort(names.begin(), names.end());
  }
  std::vector<Sample> out;
  for (const auto& id : names) {
    Sample s;
    s.id = id;
    s.image = load_ppm((fs::path(root) / "images" / (id + ".ppm")).string());
    const fs::path label = fs::path(root) / "labels" / (id + ".txt");
    if (fs::exists(label)) {
      try {
        s.gts = load_yolo_txt(label.string());
      } catch (const ParseError& e) {
        throw ParseError(label.string() + ": " + e.what());
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_manifest(const std::string& path, const std::vector<std::string>& ids) {
  std::ofstream os(path);
  if (!os) throw Error("cannot write " + path);
  for (const auto& id : ids) os << id << '\n';
}

std::vector<std::string> read_manifest(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("cannot open " + path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) ids.push_back(line);
  }
  return ids;
}

Tensor4 stack_images(const std::vector<const Sample*>& samples) {
  if (samples.empty()) throw DimensionError("n", "cannot stack an empty batch");
  const Shape s0 = samples[0]->image.shape();
  Tensor4 out({static_cast<int>(samples.size()), s0.c, s0.h, s0.w});
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Tensor4& im = samples[i]->image;
    if (im.c() != s0.c) throw DimensionError("c", "batch images differ in channels");
    if (im.h() != s0.h) throw DimensionError("h", "batch images differ in height");
    if (im.w() != s0.w) throw DimensionError("w", "batch images differ in width");
    std::copy(im.data().begin(), im.data().end(), out.data().begin() + static_cast<std::ptrdiff_t>(i * s0.c * s0.plane()));
  }
  return out;
}

}  // namespace fndet

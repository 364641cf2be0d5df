#include "modnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "modnet/errors.hpp"

namespace modnet {

namespace {

constexpr std::uint32_t kImagesMagic = 0x00000803;
constexpr std::uint32_t kLabelsMagic = 0x00000801;

std::uint32_t read_u32_be(std::istream& in, const std::string& path) {
  unsigned char b[4];
  if (!in.read(reinterpret_cast<char*>(b), 4))
    throw IdxTruncatedError("truncated IDX file: " + path);
  return (std::uint32_t(b[0]) << 24) | (std::uint32_t(b[1]) << 16) | (std::uint32_t(b[2]) << 8) |
         std::uint32_t(b[3]);
}

void write_u32_be(std::ostream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v >> 24),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 8), static_cast<unsigned char>(v)};
  out.write(reinterpret_cast<const char*>(b), 4);
}

std::vector<std::vector<int>> indices_by_class(const LabeledDataset& ds) {
  std::vector<std::vector<int>> by_class(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class[ds.labels[i]].push_back(static_cast<int>(i));
  return by_class;
}

}  // namespace

void LabeledDataset::validate() const {
  if (images.size() != labels.size())
    throw DataError("dataset has " + std::to_string(images.size()) + " images but " +
                    std::to_string(labels.size()) + " labels");
  std::vector<int> counts(num_classes, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= num_classes)
      throw DataError("label " + std::to_string(labels[i]) + " out of range at index " +
                      std::to_string(i));
    ++counts[labels[i]];
  }
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgf(images_path, std::ios::binary);
  if (!imgf) throw DataError("cannot open " + images_path);
  const std::uint32_t magic = read_u32_be(imgf, images_path);
  if (magic != kImagesMagic)
    throw IdxMagicError("bad image magic in " + images_path + ": got " + std::to_string(magic));
  const std::uint32_t n = read_u32_be(imgf, images_path);
  const std::uint32_t rows = read_u32_be(imgf, images_path);
  const std::uint32_t cols = read_u32_be(imgf, images_path);

  std::ifstream labf(labels_path, std::ios::binary);
  if (!labf) throw DataError("cannot open " + labels_path);
  const std::uint32_t lmagic = read_u32_be(labf, labels_path);
  if (lmagic != kLabelsMagic)
    throw IdxMagicError("bad label magic in " + labels_path + ": got " + std::to_string(lmagic));
  const std::uint32_t ln = read_u32_be(labf, labels_path);
  if (ln != n)
    throw IdxCountMismatchError(images_path + " holds " + std::to_string(n) + " images but " +
                                labels_path + " holds " + std::to_string(ln) + " labels");

  LabeledDataset ds;
  ds.images.reserve(n);
  ds.labels.reserve(n);
  std::vector<unsigned char> buf(static_cast<std::size_t>(rows) * cols);
  int max_label = -1;
  for (std::uint32_t i = 0; i < n; ++i) {
    if (!imgf.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size())))
      throw IdxTruncatedError("truncated image data in " + images_path);
    Tensor img({1, static_cast<int>(rows), static_cast<int>(cols)});
    for (std::size_t p = 0; p < buf.size(); ++p) img[p] = buf[p] / 255.0;
    ds.images.push_back(std::move(img));

    unsigned char label;
    if (!labf.read(reinterpret_cast<char*>(&label), 1))
      throw IdxTruncatedError("truncated label data in " + labels_path);
    ds.labels.push_back(label);
    max_label = std::max(max_label, static_cast<int>(label));
  }
  ds.num_classes = max_label + 1;
  ds.validate();
  return ds;
}

void save_idx(const LabeledDataset& ds, const std::string& images_path,
              const std::string& labels_path) {
  ds.validate();
  if (ds.num_classes > 256) throw DataError("IDX labels are single bytes; too many classes");
  const int rows = ds.images.empty() ? 0 : ds.images[0].shape()[1];
  const int cols = ds.images.empty() ? 0 : ds.images[0].shape()[2];

  std::ofstream imgf(images_path, std::ios::binary);
  if (!imgf) throw DataError("cannot write " + images_path);
  write_u32_be(imgf, kImagesMagic);
  write_u32_be(imgf, static_cast<std::uint32_t>(ds.size()));
  write_u32_be(imgf, static_cast<std::uint32_t>(rows));
  write_u32_be(imgf, static_cast<std::uint32_t>(cols));
  std::vector<unsigned char> buf;
  for (const Tensor& img : ds.images) {
    if (img.shape() != Shape{1, rows, cols})
      throw DataError("IDX export needs uniform single-channel images");
    buf.resize(img.numel());
    for (std::int64_t p = 0; p < img.numel(); ++p) {
      const double v = std::clamp(img[p], 0.0, 1.0);
      buf[p] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    imgf.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  }

  std::ofstream labf(labels_path, std::ios::binary);
  if (!labf) throw DataError("cannot write " + labels_path);
  write_u32_be(labf, kLabelsMagic);
  write_u32_be(labf, static_cast<std::uint32_t>(ds.size()));
  for (int label : ds.labels) {
    const unsigned char b = static_cast<unsigned char>(label);
    labf.write(reinterpret_cast<const char*>(&b), 1);
  }
  if (!imgf || !labf) throw DataError("short write while saving IDX files");
}

LabeledDataset subsample_per_class(const LabeledDataset& ds, int n, std::uint64_t seed) {
  if (n < 0) throw DataError("negative per-class count");
  std::vector<std::vector<int>> by_class = indices_by_class(ds);
  std::mt19937_64 rng(seed);

  LabeledDataset out;
  out.num_classes = ds.num_classes;
  for (int k = 0; k < ds.num_classes; ++k) {
    auto& pool = by_class[k];
    if (static_cast<int>(pool.size()) < n)
      throw DataError("class " + std::to_string(k) + " has " + std::to_string(pool.size()) +
                      " examples, need " + std::to_string(n));
    std::shuffle(pool.begin(), pool.end(), rng);
    for (int i = 0; i < n; ++i) {
      out.images.push_back(ds.images[pool[i]]);
      out.labels.push_back(k);
    }
  }
  return out;
}

std::pair<LabeledDataset, LabeledDataset> split_per_class(const LabeledDataset& ds, int n_train) {
  LabeledDataset train, test;
  train.num_classes = test.num_classes = ds.num_classes;
  std::vector<int> seen(ds.num_classes, 0);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    LabeledDataset& dst = (seen[ds.labels[i]]++ < n_train) ? train : test;
    dst.images.push_back(ds.images[i]);
    dst.labels.push_back(ds.labels[i]);
  }
  return {std::move(train), std::move(test)};
}

Tensor apply_shift_zoom(const Tensor& img, double dx, double dy, double scale) {
  if (img.rank() != 3) throw ShapeError("augmentation expects a (C,H,W) image");
  const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
  const double cy = (H - 1) / 2.0, cx = (W - 1) / 2.0;
  Tensor out(img.shape());
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        const double sy = (y - cy) / scale + cy - dy;
        const double sx = (x - cx) / scale + cx - dx;
        const int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
        const double fy = sy - y0, fx = sx - x0;
        auto sample = [&](int yy, int xx) -> double {
          if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;  // zero fill
          return img.at(c, yy, xx);
        };
        const double v = (1 - fy) * ((1 - fx) * sample(y0, x0) + fx * sample(y0, x0 + 1)) +
                         fy * ((1 - fx) * sample(y0 + 1, x0) + fx * sample(y0 + 1, x0 + 1));
        out.at(c, y, x) = std::clamp(v, 0.0, 1.0);
      }
  return out;
}

Tensor augment_shift_zoom(const Tensor& img, double max_frac, std::mt19937_64& rng) {
  if (max_frac < 0 || max_frac >= 1)
    throw ContractError("augmentation fraction must be in [0,1)");
  if (max_frac == 0) return img;
  const int H = img.shape()[1], W = img.shape()[2];
  std::uniform_real_distribution<double> dxd(-max_frac * W, max_frac * W);
  std::uniform_real_distribution<double> dyd(-max_frac * H, max_frac * H);
  std::uniform_real_distribution<double> sd(1.0 - max_frac, 1.0 + max_frac);
  const double dx = dxd(rng), dy = dyd(rng), s = sd(rng);
  return apply_shift_zoom(img, dx, dy, s);
}

Tensor augment_shift_zoom(const Tensor& img, double max_frac, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return augment_shift_zoom(img, max_frac, rng);
}

BatchSchedule small_data_schedule(const LabeledDataset& ds, int per_class, int repeats,
                                  std::uint64_t seed) {
  if (per_class < 1) throw DataError("schedule needs per_class >= 1");
  if (repeats < 1) throw DataError("schedule needs repeats >= 1");
  std::vector<std::vector<int>> by_class = indices_by_class(ds);
  const std::size_t q = by_class.empty() ? 0 : by_class[0].size();
  for (int k = 0; k < ds.num_classes; ++k) {
    if (by_class[k].size() != q)
      throw DataError("class " + std::to_string(k) + " holds " +
                      std::to_string(by_class[k].size()) + " examples, others hold " +
                      std::to_string(q));
  }
  if (q % per_class != 0)
    throw DataError("class size " + std::to_string(q) + " not divisible by per_class " +
                    std::to_string(per_class));

  std::mt19937_64 rng(seed);
  for (auto& pool : by_class) std::shuffle(pool.begin(), pool.end(), rng);

  BatchSchedule schedule;
  schedule.repeats = repeats;
  const int n_batches = static_cast<int>(q) / per_class;
  for (int b = 0; b < n_batches; ++b) {
    std::vector<int> batch;
    batch.reserve(static_cast<std::size_t>(per_class) * ds.num_classes);
    for (int k = 0; k < ds.num_classes; ++k)
      for (int i = 0; i < per_class; ++i) batch.push_back(by_class[k][b * per_class + i]);
    std::shuffle(batch.begin(), batch.end(), rng);
    schedule.batches.push_back(std::move(batch));
  }
  return schedule;
}

namespace {

constexpr int kMotifs = 6, kMotifSize = 5, kMotifsPerClass = 3;

// The noise dial buys both pixel noise and positional jitter: low-noise
// tasks stay close to their prototypes (a nearest-prototype classifier
// solves them), higher settings move the motifs around their anchors so
// only translation-tolerant features stay predictive.
int jitter_radius(double noise) { return static_cast<int>(noise * 20.0); }

// Four oriented bars, a blob and a ring; distinct enough that a small
// conv stack can tell them apart. The dictionary is shared between source
// and target tasks, so motif detectors learned on one side carry over.
Tensor make_motif(int index, int /*count*/) {
  const double c = (kMotifSize - 1) / 2.0;
  Tensor m({kMotifSize, kMotifSize});
  for (int y = 0; y < kMotifSize; ++y)
    for (int x = 0; x < kMotifSize; ++x) {
      const double dy = y - c, dx = x - c;
      double v = 0;
      if (index < 4) {  // bar at 0/45/90/135 degrees
        const double theta = 3.14159265358979323846 * index / 4.0;
        const double d = dx * -std::sin(theta) + dy * std::cos(theta);
        v = std::exp(-(d * d) / (2 * 0.8 * 0.8));
      } else if (index == 4) {  // blob
        v = std::exp(-(dx * dx + dy * dy) / (2 * 1.1 * 1.1));
      } else {  // ring
        const double r = std::sqrt(dx * dx + dy * dy) - 1.7;
        v = std::exp(-(r * r) / (2 * 0.55 * 0.55));
      }
      m.at(y, x) = v;
    }
  return m;
}

Tensor rot90_patch(const Tensor& m) {
  Tensor out({kMotifSize, kMotifSize});
  for (int y = 0; y < kMotifSize; ++y)
    for (int x = 0; x < kMotifSize; ++x) out.at(x, kMotifSize - 1 - y) = m.at(y, x);
  return out;
}

// A class is a combination of motifs at coarse anchor positions. Per
// example the motifs jitter around their anchors and vary in strength, so
// pixel templates are unreliable while motif detectors stay predictive.
struct ClassSpec {
  std::array<int, kMotifsPerClass> motif;
  std::array<std::pair<int, int>, kMotifsPerClass> anchor;
};

void stamp(Tensor& img, const Tensor& motif, int oy, int ox, double gain) {
  const int S = img.shape()[1];
  for (int y = 0; y < kMotifSize; ++y)
    for (int x = 0; x < kMotifSize; ++x) {
      const int iy = oy + y, ix = ox + x;
      if (iy < 0 || iy >= S || ix < 0 || ix >= S) continue;
      img.at(0, iy, ix) += gain * motif.at(y, x);
    }
}

}  // namespace

SyntheticTask gen_synthetic_transfer(std::uint64_t seed, int k_src, int k_tgt, int n_per_class,
                                     double shift, double noise, int image_size) {
  if (k_src < 2 || k_tgt < 2) throw ContractError("synthetic tasks need at least two classes");
  if (shift < 0 || shift > 1) throw ContractError("shift must be in [0,1]");
  const int kJitter = jitter_radius(noise);
  if (image_size < 2 * kMotifSize)
    throw ContractError("synthetic images must be at least " + std::to_string(2 * kMotifSize) +
                        " pixels");

  std::mt19937_64 rng(seed);

  std::vector<Tensor> dictionary;
  for (int m = 0; m < kMotifs; ++m) dictionary.push_back(make_motif(m, kMotifs));
  // the target-side dictionary is the source one pushed by `shift` toward
  // its quarter-turn rotation plus an intensity offset
  std::vector<Tensor> shifted;
  for (const Tensor& m : dictionary) {
    Tensor s({kMotifSize, kMotifSize});
    s.array() = (1.0 - shift) * m.array() + shift * rot90_patch(m).array();
    shifted.push_back(std::move(s));
  }

  // motifs sit in three of the four image quadrants, so classes differ in
  // which parts appear where rather than in any single pixel template
  const int near = (image_size - 2 * kMotifSize) / 3, far = image_size - kMotifSize - near;
  const std::array<std::pair<int, int>, 4> quadrants = {
      std::pair{near, near}, {near, far}, {far, near}, {far, far}};
  auto draw_class = [&] {
    // motifs and quadrants drawn without replacement: classes are
    // combination-coded and share parts, which is what makes the
    // features worth transferring
    ClassSpec spec;
    std::array<int, kMotifs> ids;
    for (int i = 0; i < kMotifs; ++i) ids[i] = i;
    std::array<int, 4> quads = {0, 1, 2, 3};
    for (int i = 0; i < kMotifsPerClass; ++i) {
      std::uniform_int_distribution<int> pick(i, kMotifs - 1);
      std::swap(ids[i], ids[pick(rng)]);
      spec.motif[i] = ids[i];
      std::uniform_int_distribution<int> qpick(i, 3);
      std::swap(quads[i], quads[qpick(rng)]);
      spec.anchor[i] = quadrants[quads[i]];
    }
    return spec;
  };

  std::vector<ClassSpec> source_specs, target_specs;
  for (int k = 0; k < k_src; ++k) source_specs.push_back(draw_class());
  for (int k = 0; k < k_tgt; ++k) target_specs.push_back(draw_class());  // held-out combinations

  auto canonical_raw = [&](const ClassSpec& spec, const std::vector<Tensor>& dict) {
    Tensor proto({1, image_size, image_size});
    for (int i = 0; i < kMotifsPerClass; ++i)
      stamp(proto, dict[spec.motif[i]], spec.anchor[i].first, spec.anchor[i].second, 1.0);
    return proto;
  };
  auto class_scale = [&](const ClassSpec& spec, const std::vector<Tensor>& dict) {
    return 0.8 / std::max(canonical_raw(spec, dict).array().maxCoeff(), 1e-9);
  };
  auto canonical = [&](const ClassSpec& spec, const std::vector<Tensor>& dict, double offset) {
    Tensor proto = canonical_raw(spec, dict);
    proto.array() = (proto.array() * class_scale(spec, dict) + offset).min(1.0).max(0.0);
    return proto;
  };

  SyntheticTask task;
  for (const ClassSpec& spec : source_specs)
    task.source_protos.push_back(canonical(spec, dictionary, 0.0));
  for (const ClassSpec& spec : target_specs)
    task.target_protos.push_back(canonical(spec, shifted, 0.15 * shift));

  std::uniform_int_distribution<int> jitter(-kJitter, kJitter);
  std::uniform_real_distribution<double> gain(0.7, 1.0);
  std::normal_distribution<double> noise_d(0.0, noise);
  auto draw_examples = [&](const std::vector<ClassSpec>& specs, const std::vector<Tensor>& dict,
                           double offset, LabeledDataset& ds) {
    ds.num_classes = static_cast<int>(specs.size());
    for (int k = 0; k < ds.num_classes; ++k) {
      const double scale = class_scale(specs[k], dict);  // same units as the prototype
      for (int i = 0; i < n_per_class; ++i) {
        Tensor img({1, image_size, image_size});
        for (int m = 0; m < kMotifsPerClass; ++m)
          stamp(img, dict[specs[k].motif[m]], specs[k].anchor[m].first + jitter(rng),
                specs[k].anchor[m].second + jitter(rng), gain(rng));
        for (std::int64_t p = 0; p < img.numel(); ++p)
          img[p] = std::clamp(img[p] * scale + offset + noise_d(rng), 0.0, 1.0);
        ds.images.push_back(std::move(img));
        ds.labels.push_back(k);
      }
    }
  };
  draw_examples(source_specs, dictionary, 0.0, task.source);
  draw_examples(target_specs, shifted, 0.15 * shift, task.target);
  return task;
}

}  // namespace modnet

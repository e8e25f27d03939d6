#include "alignlab/tasks.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numbers>
#include <string>

#include "alignlab/error.hpp"

namespace alignlab {

using Index = Eigen::Index;

double add_task_label(std::span<const double> x, std::size_t t) {
  const double lag2 = t >= 2 ? x[t - 2] : 0.0;
  const double lag5 = t >= 5 ? x[t - 5] : 0.0;
  return 0.5 + 0.5 * lag2 - 0.25 * lag5;
}

namespace {

std::vector<Sequence> add_sequences(std::size_t count, std::size_t length, double p, Rng rng) {
  std::vector<Sequence> out(count);
  for (auto& seq : out) {
    seq.x.resize(length);
    seq.y.resize(length);
    for (auto& v : seq.x) v = rng.uniform() < p ? 1.0 : 0.0;
    for (std::size_t t = 0; t < length; ++t) seq.y[t] = add_task_label(seq.x, t);
  }
  return out;
}

}  // namespace

AddTaskSet gen_add_task(std::size_t n_train, std::size_t n_test, std::size_t length, double p,
                        std::uint64_t seed) {
  if (length < 6) throw Error(ErrorKind::invalid_config, "add task needs sequences of length >= 6");
  if (!(p >= 0.0 && p <= 1.0)) throw Error(ErrorKind::invalid_config, "p must be in [0, 1]");
  AddTaskSet set;
  set.length = length;
  set.train = add_sequences(n_train, length, p, Rng(seed, 1));
  set.test = add_sequences(n_test, length, p, Rng(seed, 2));
  return set;
}

SequenceBatch make_sequence_batch(const std::vector<Sequence>& sequences,
                                  std::span<const std::size_t> ids) {
  if (ids.empty()) throw Error(ErrorKind::empty_input, "empty sequence batch");
  const std::size_t length = sequences.at(ids[0]).x.size();
  const auto batch = static_cast<Index>(ids.size());
  SequenceBatch out;
  out.ids.assign(ids.begin(), ids.end());
  out.inputs.assign(length, Matrix(1, batch));
  out.targets.assign(length, Matrix(1, batch));
  for (Index b = 0; b < batch; ++b) {
    const Sequence& seq = sequences.at(ids[static_cast<std::size_t>(b)]);
    if (seq.x.size() != length)
      throw Error(ErrorKind::shape_mismatch, "sequences in a batch differ in length");
    for (std::size_t k = 0; k < length; ++k) {
      out.inputs[k](0, b) = seq.x[k];
      out.targets[k](0, b) = seq.y[k];
    }
  }
  return out;
}

std::vector<Matrix> sequence_inputs(const std::vector<Sequence>& sequences) {
  std::vector<std::size_t> ids(sequences.size());
  for (std::size_t i = 0; i < ids.size(); ++i) ids[i] = i;
  return make_sequence_batch(sequences, ids).inputs;
}

ClassificationSet ClassificationSet::slice(std::size_t begin, std::size_t count) const {
  if (begin + count > size()) throw Error(ErrorKind::shape_mismatch, "slice out of range");
  ClassificationSet out;
  out.inputs = inputs.middleCols(static_cast<Index>(begin), static_cast<Index>(count));
  out.targets = targets.middleCols(static_cast<Index>(begin), static_cast<Index>(count));
  out.labels.assign(labels.begin() + static_cast<std::ptrdiff_t>(begin),
                    labels.begin() + static_cast<std::ptrdiff_t>(begin + count));
  out.classes = classes;
  out.image = image;
  return out;
}

Matrix encode_targets(std::span<const int> labels, std::size_t classes) {
  Matrix t = Matrix::Constant(static_cast<Index>(classes), static_cast<Index>(labels.size()),
                              -kTargetOffset);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes)
      throw Error(ErrorKind::shape_mismatch, "label " + std::to_string(labels[i]) +
                                                 " outside " + std::to_string(classes) +
                                                 " classes");
    t(labels[i], static_cast<Index>(i)) += 1.0;
  }
  return t;
}

double accuracy(const Matrix& outputs, std::span<const int> labels) {
  if (static_cast<std::size_t>(outputs.cols()) != labels.size())
    throw Error(ErrorKind::shape_mismatch, "outputs and labels differ in count");
  if (labels.empty()) return 0.0;
  std::size_t hits = 0;
  for (Index c = 0; c < outputs.cols(); ++c) {
    Index best = 0;
    outputs.col(c).maxCoeff(&best);
    if (best == labels[static_cast<std::size_t>(c)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

ClassificationSet gen_synthetic_classification(std::size_t n, std::size_t input_dim,
                                               std::size_t classes, double margin, Rng& rng) {
  if (classes < 2) throw Error(ErrorKind::invalid_config, "need at least two classes");
  if (!(margin > 0.0)) throw Error(ErrorKind::invalid_config, "margin must be positive");
  if (n == 0 || input_dim == 0) throw Error(ErrorKind::empty_input, "empty dataset requested");

  const auto dim = static_cast<Index>(input_dim);
  Matrix centroids(dim, static_cast<Index>(classes));
  for (Index c = 0; c < centroids.cols(); ++c)
    for (Index i = 0; i < dim; ++i) centroids(i, c) = margin * rng.normal();

  ClassificationSet set;
  set.classes = classes;
  set.labels.resize(n);
  set.inputs.resize(dim, static_cast<Index>(n));
  for (std::size_t s = 0; s < n; ++s) {
    const int label = static_cast<int>(s % classes);
    set.labels[s] = label;
    for (Index i = 0; i < dim; ++i)
      set.inputs(i, static_cast<Index>(s)) = centroids(i, label) + rng.normal();
  }
  const double lo = set.inputs.minCoeff();
  const double hi = set.inputs.maxCoeff();
  set.inputs = (set.inputs.array() - lo) / (hi - lo);
  set.targets = encode_targets(set.labels, classes);
  return set;
}

// ---- IDX --------------------------------------------------------------------

namespace {

std::uint32_t read_be32(std::istream& in, const std::filesystem::path& path) {
  std::array<unsigned char, 4> b{};
  if (!in.read(reinterpret_cast<char*>(b.data()), 4))
    throw Error(ErrorKind::truncated, "header of " + path.string());
  return (std::uint32_t{b[0]} << 24) | (std::uint32_t{b[1]} << 16) | (std::uint32_t{b[2]} << 8) |
         std::uint32_t{b[3]};
}

void write_be32(std::ostream& out, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16),
                              static_cast<char>(v >> 8), static_cast<char>(v)};
  out.write(b.data(), 4);
}

}  // namespace

IdxFile read_idx(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::io, "cannot open " + path.string());
  IdxFile file;
  file.magic = read_be32(in, path);
  if (file.magic != kIdxImageMagic && file.magic != kIdxLabelMagic)
    throw Error(ErrorKind::bad_magic, path.string());
  const std::size_t rank = file.magic & 0xFFu;
  std::size_t count = 1;
  for (std::size_t d = 0; d < rank; ++d) {
    file.dims.push_back(read_be32(in, path));
    count *= file.dims.back();
  }
  file.payload.resize(count);
  in.read(reinterpret_cast<char*>(file.payload.data()), static_cast<std::streamsize>(count));
  if (static_cast<std::size_t>(in.gcount()) != count)
    throw Error(ErrorKind::truncated, path.string() + " holds " + std::to_string(in.gcount()) +
                                          " of " + std::to_string(count) + " payload bytes");
  return file;
}

void write_idx(const std::filesystem::path& path, const IdxFile& file) {
  std::size_t count = 1;
  for (auto d : file.dims) count *= d;
  if ((file.magic & 0xFFu) != file.dims.size() || count != file.payload.size())
    throw Error(ErrorKind::shape_mismatch, "IDX header does not describe the payload");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::io, "cannot write " + path.string());
  write_be32(out, file.magic);
  for (auto d : file.dims) write_be32(out, d);
  out.write(reinterpret_cast<const char*>(file.payload.data()),
            static_cast<std::streamsize>(file.payload.size()));
}

ClassificationSet load_idx(const std::filesystem::path& image_path,
                           const std::filesystem::path& label_path, std::size_t classes,
                           std::size_t limit) {
  const IdxFile images = read_idx(image_path);
  const IdxFile labels = read_idx(label_path);
  if (images.magic != kIdxImageMagic)
    throw Error(ErrorKind::bad_magic, image_path.string() + " is not a 3-D image file");
  if (labels.magic != kIdxLabelMagic)
    throw Error(ErrorKind::bad_magic, label_path.string() + " is not a 1-D label file");
  return idx_to_classification(images, labels, classes, limit);
}

ClassificationSet idx_to_classification(const IdxFile& images, const IdxFile& labels,
                                        std::size_t classes, std::size_t limit) {
  if (images.magic != kIdxImageMagic || labels.magic != kIdxLabelMagic)
    throw Error(ErrorKind::bad_magic, "expected an image file and a label file");
  if (images.dims[0] != labels.dims[0])
    throw Error(ErrorKind::shape_mismatch, "image and label counts differ");

  std::size_t n = images.dims[0];
  if (limit != 0) n = std::min(n, limit);
  const std::size_t height = images.dims[1];
  const std::size_t width = images.dims[2];
  const std::size_t pixels = height * width;

  ClassificationSet set;
  set.classes = classes;
  set.image = {1, height, width};
  set.inputs.resize(static_cast<Index>(pixels), static_cast<Index>(n));
  set.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t p = 0; p < pixels; ++p)
      set.inputs(static_cast<Index>(p), static_cast<Index>(i)) =
          static_cast<double>(images.payload[i * pixels + p]) / 255.0;
    set.labels[i] = labels.payload[i];
    if (static_cast<std::size_t>(set.labels[i]) >= classes)
      throw Error(ErrorKind::shape_mismatch, "label " + std::to_string(set.labels[i]) +
                                                 " exceeds the class count");
  }
  set.targets = encode_targets(set.labels, classes);
  return set;
}

// ---- Glyphs -----------------------------------------------------------------

namespace {

struct Segment {
  double x0, y0, x1, y1;
};

std::vector<Segment> glyph_template(int label) {
  switch (label) {
    case 0: {
      std::vector<Segment> ring;
      for (int i = 0; i < 12; ++i) {
        const double a0 = 2.0 * std::numbers::pi * i / 12.0;
        const double a1 = 2.0 * std::numbers::pi * (i + 1) / 12.0;
        ring.push_back({0.3 * std::cos(a0), 0.35 * std::sin(a0), 0.3 * std::cos(a1),
                        0.35 * std::sin(a1)});
      }
      return ring;
    }
    case 1: return {{0.0, -0.35, 0.0, 0.35}};
    case 2: return {{-0.3, -0.35, 0.3, -0.35}, {0.3, -0.35, -0.3, 0.35}, {-0.3, 0.35, 0.3, 0.35}};
    case 3: return {{-0.3, -0.35, 0.3, 0.35}, {0.3, -0.35, -0.3, 0.35}};
    case 4: return {{0.0, -0.35, 0.0, 0.35}, {-0.3, 0.0, 0.3, 0.0}};
    case 5: return {{0.0, -0.35, 0.3, 0.3}, {0.3, 0.3, -0.3, 0.3}, {-0.3, 0.3, 0.0, -0.35}};
    case 6: return {{-0.25, -0.35, -0.25, 0.35}, {-0.25, 0.35, 0.3, 0.35}};
    case 7: return {{-0.3, -0.35, 0.3, -0.35}, {0.0, -0.35, 0.0, 0.35}};
    case 8: return {{-0.3, -0.15, 0.3, -0.15}, {-0.3, 0.15, 0.3, 0.15}};
    default: return {{-0.3, -0.35, 0.0, 0.35}, {0.0, 0.35, 0.3, -0.35}};
  }
}

double segment_distance(double px, double py, const Segment& s) {
  const double dx = s.x1 - s.x0;
  const double dy = s.y1 - s.y0;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((px - s.x0) * dx + (py - s.y0) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  const double ex = s.x0 + t * dx - px;
  const double ey = s.y0 + t * dy - py;
  return std::sqrt(ex * ex + ey * ey);
}

}  // namespace

GlyphImages gen_glyph_images(std::size_t n, Rng& rng) {
  constexpr std::size_t kSide = 28;
  GlyphImages out;
  out.images.magic = kIdxImageMagic;
  out.images.dims = {static_cast<std::uint32_t>(n), kSide, kSide};
  out.images.payload.resize(n * kSide * kSide);
  out.labels.magic = kIdxLabelMagic;
  out.labels.dims = {static_cast<std::uint32_t>(n)};
  out.labels.payload.resize(n);

  std::vector<double> canvas(kSide * kSide);
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(rng.below(10));
    out.labels.payload[i] = static_cast<std::uint8_t>(label);

    auto strokes = glyph_template(label);
    if (rng.uniform() < 0.3) {
      // Short distractor stroke.
      const double cx = rng.uniform() - 0.5, cy = rng.uniform() - 0.5;
      const double a = rng.uniform() * std::numbers::pi;
      strokes.push_back({cx, cy, cx + 0.2 * std::cos(a), cy + 0.2 * std::sin(a)});
    }
    const double angle = (rng.uniform() - 0.5) * 0.6;
    const double scale = 0.7 + 0.4 * rng.uniform();
    const double shift_x = (rng.uniform() - 0.5) * 0.24;
    const double shift_y = (rng.uniform() - 0.5) * 0.24;
    const double thickness = (1.0 + 1.2 * rng.uniform()) / kSide;
    const double ca = std::cos(angle) * scale, sa = std::sin(angle) * scale;
    for (auto& s : strokes) {
      const double x0 = ca * s.x0 - sa * s.y0 + shift_x, y0 = sa * s.x0 + ca * s.y0 + shift_y;
      const double x1 = ca * s.x1 - sa * s.y1 + shift_x, y1 = sa * s.x1 + ca * s.y1 + shift_y;
      s = {x0, y0, x1, y1};
    }

    for (std::size_t py = 0; py < kSide; ++py) {
      for (std::size_t px = 0; px < kSide; ++px) {
        const double ux = (static_cast<double>(px) + 0.5) / kSide - 0.5;
        const double uy = (static_cast<double>(py) + 0.5) / kSide - 0.5;
        double d = 1e9;
        for (const auto& s : strokes) d = std::min(d, segment_distance(ux, uy, s));
        double v = std::clamp(1.0 - (d - thickness) * kSide, 0.0, 1.0);
        v = std::clamp(v + 0.1 * rng.normal(), 0.0, 1.0);
        canvas[py * kSide + px] = v;
      }
    }
    for (std::size_t p = 0; p < canvas.size(); ++p)
      out.images.payload[i * kSide * kSide + p] =
          static_cast<std::uint8_t>(std::lround(canvas[p] * 255.0));
  }
  return out;
}

}  // namespace alignlab

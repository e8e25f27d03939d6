#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "alignlab/network.hpp"
#include "alignlab/rng.hpp"
#include "alignlab/rnn.hpp"
#include "alignlab/tensor.hpp"

namespace alignlab {

// ---- Add task ---------------------------------------------------------------

struct Sequence {
  std::vector<double> x;
  std::vector<double> y;
};

struct AddTaskSet {
  std::vector<Sequence> train;
  std::vector<Sequence> test;
  std::size_t length = 0;
};

/// y(t) = 0.5 + 0.5 x(t-2) - 0.25 x(t-5), taps before t = 0 read as 0.
double add_task_label(std::span<const double> x, std::size_t t);

/// Bernoulli(p) inputs; train and test come from separate streams of `seed`.
AddTaskSet gen_add_task(std::size_t n_train, std::size_t n_test, std::size_t length, double p,
                        std::uint64_t seed);

/// Step-major batch of the sequences `ids` (one column per sequence).
SequenceBatch make_sequence_batch(const std::vector<Sequence>& sequences,
                                  std::span<const std::size_t> ids);
/// Inputs of every sequence, step-major, for recurrent snapshots.
std::vector<Matrix> sequence_inputs(const std::vector<Sequence>& sequences);

// ---- Classification ---------------------------------------------------------

inline constexpr double kTargetOffset = 0.1;

struct ClassificationSet {
  /// features x examples, scaled to [0, 1].
  Matrix inputs;
  /// classes x examples, one-hot minus 0.1.
  Matrix targets;
  std::vector<int> labels;
  std::size_t classes = 0;
  /// Image geometry when the features are a picture; zero otherwise.
  MapShape image{};

  std::size_t size() const { return labels.size(); }
  ClassificationSet slice(std::size_t begin, std::size_t count) const;
};

Matrix encode_targets(std::span<const int> labels, std::size_t classes);
/// Fraction of columns whose argmax matches the label.
double accuracy(const Matrix& outputs, std::span<const int> labels);

/// Gaussian clusters: centroid_c = margin * u_c with u_c ~ N(0, I), samples
/// centroid + N(0, I), labels assigned round-robin, then the whole set is
/// mapped affinely onto [0, 1].
ClassificationSet gen_synthetic_classification(std::size_t n, std::size_t input_dim,
                                               std::size_t classes, double margin, Rng& rng);

// ---- IDX files ----------------------------------------------------------------

inline constexpr std::uint32_t kIdxImageMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelMagic = 0x00000801;

struct IdxFile {
  std::uint32_t magic = 0;
  std::vector<std::uint32_t> dims;
  std::vector<std::uint8_t> payload;
};

IdxFile read_idx(const std::filesystem::path& path);
void write_idx(const std::filesystem::path& path, const IdxFile& file);

/// Pixels / 255, labels one-hot minus 0.1. Optional `limit` keeps the first
/// examples only.
ClassificationSet load_idx(const std::filesystem::path& image_path,
                           const std::filesystem::path& label_path, std::size_t classes = 10,
                           std::size_t limit = 0);

/// Same decoding as load_idx for files already in memory.
ClassificationSet idx_to_classification(const IdxFile& images, const IdxFile& labels,
                                        std::size_t classes = 10, std::size_t limit = 0);

/// Procedural 28x28 ten-class stroke images (ubyte IDX pair).
struct GlyphImages {
  IdxFile images;
  IdxFile labels;
};
GlyphImages gen_glyph_images(std::size_t n, Rng& rng);

}  // namespace alignlab

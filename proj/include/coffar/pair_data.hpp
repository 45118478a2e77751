#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "coffar/model.hpp"
#include "coffar/rng.hpp"
#include "coffar/tensor.hpp"

namespace coffar {

struct Identity {
  std::string id;
  std::vector<Tensor> images;  // each 20x20, values in [0,1]
};

/// Identity-indexed face crops, sorted by id.
class Gallery {
 public:
  Gallery(std::vector<Identity> identities, std::string source);

  std::span<const Identity> identities() const noexcept { return ids_; }
  std::size_t size() const noexcept { return ids_.size(); }
  const Identity& operator[](std::size_t i) const { return ids_.at(i); }
  /// Index of the identity with this id, if any.
  std::optional<std::size_t> find(std::string_view id) const;
  const std::string& source() const noexcept { return source_; }

  std::size_t skipped_files = 0;
  std::size_t dropped_identities = 0;

 private:
  std::vector<Identity> ids_;
  std::string source_;
};

struct Provenance {
  std::string id_a;
  std::size_t idx_a = 0;
  std::string id_b;
  std::size_t idx_b = 0;

  friend bool operator==(const Provenance&, const Provenance&) = default;
  friend auto operator<=>(const Provenance&, const Provenance&) = default;
};

struct PairSample {
  Tensor image;  // 20x40
  PairLabel label = PairLabel::Different;
  Provenance provenance;
};

struct CountFormulas {
  std::uint64_t n_s = 0;  // ordered same-identity pairs
  std::uint64_t n_d = 0;  // different-identity pairs one identity can form
  std::uint64_t n_a = 0;  // different-identity pairs over all identities

  friend bool operator==(const CountFormulas&, const CountFormulas&) = default;
};

/// (x(x-1)n, x^2(n-1), x^2(n-1)n) for x images per identity and n identities.
CountFormulas count_formulas(std::uint64_t x, std::uint64_t n);

struct DatasetStats {
  std::size_t n_ids = 0;
  std::vector<std::size_t> imgs_per_id;
  std::optional<std::size_t> uniform_imgs;  // set when every identity has the same count
  std::size_t n_same = 0;                   // emitted
  std::size_t n_diff = 0;                   // emitted
  std::uint64_t n_s = 0;                    // sum over ids of x_id (x_id - 1)
  std::optional<std::uint64_t> n_d;         // uniform galleries only
  std::uint64_t n_a = 0;                    // ordered cross-identity image pairs

  std::string summary() const;
};

DatasetStats gallery_stats(const Gallery& gallery);

/// Decodes <root>/<identity>/<image>; PGM and PNG accepted. Unreadable files
/// are skipped and identities left without images dropped, with warnings.
Gallery load_gallery(const std::filesystem::path& root);
/// Writes <root>/<identity>/img_NNN.pgm.
void save_gallery(const Gallery& gallery, const std::filesystem::path& root);

/// Columns 0-19 from a, 20-39 from b.
Tensor concat_pair(const Tensor& a, const Tensor& b);

PairSample make_pair(const Gallery& gallery, std::size_t id_a, std::size_t idx_a,
                     std::size_t id_b, std::size_t idx_b);

struct SymmetricOptions {
  bool dedupe_different = false;
};

struct SymmetricDataset {
  std::vector<PairSample> pairs;
  DatasetStats stats;
};

/// Every ordered same-identity pair plus an equal number of randomly drawn
/// different-identity pairs, shuffled by seed.
SymmetricDataset generate_symmetric(const Gallery& gallery, std::uint64_t seed,
                                    const SymmetricOptions& options = {});

/// Infinite seeded stream: draw t is a same pair when t is even, a
/// different pair otherwise. Holds a reference to the gallery.
class ExhaustiveStream {
 public:
  struct State {
    Rng::State rng{};
    std::uint64_t count = 0;
  };

  ExhaustiveStream(const Gallery& gallery, std::uint64_t seed);

  PairSample next();
  State state() const { return {rng_.state(), count_}; }
  void restore(const State& s);

 private:
  const Gallery* gallery_;
  Rng rng_;
  std::uint64_t count_ = 0;
  std::vector<std::size_t> multi_image_ids_;
};

struct SynthOptions {
  std::size_t n_ids = 10;
  std::size_t imgs_per_id = 10;
  double noise_level = 0.05;
  std::uint64_t seed = 0;
  int max_shift = 1;
};

/// Seeded smooth base pattern per identity: a bilinearly upsampled 3x3 grid
/// of uniform values, stretched to span [0.2,0.8]. Each image
/// adds uniform noise in +-noise_level and a random translation of up to
/// max_shift pixels (edge replicated), clamped to [0,1].
Gallery synth_gallery(const SynthOptions& options);

/// Splits pairs by a hash of their unordered image provenance, so a pair and
/// its mirror always land on the same side.
struct PairSplit {
  std::vector<PairSample> train;
  std::vector<PairSample> heldout;
};
PairSplit split_by_provenance(std::vector<PairSample> pairs, double heldout_fraction,
                              std::uint64_t seed);

// ---------------------------------------------------------------------------
// Pair manifests: one JSON object per line,
//   {"label":"same"|"different","id_a":..,"idx_a":..,"id_b":..,"idx_b":..[,"image":[800 values]]}

struct PairRecord {
  PairLabel label = PairLabel::Different;
  Provenance provenance;
  std::optional<Tensor> image;

  friend bool operator==(const PairRecord&, const PairRecord&) = default;
};

struct ManifestOptions {
  bool embed_images = false;
};

void write_pair_manifest(std::span<const PairSample> pairs, const std::filesystem::path& path,
                         const ManifestOptions& options = {});
std::vector<PairRecord> read_pair_manifest(const std::filesystem::path& path);
/// Builds samples from records; inline images are used when present, gallery
/// lookups otherwise. Throws Resolution naming an unknown id or index.
std::vector<PairSample> resolve_pairs(std::span<const PairRecord> records,
                                      const Gallery* gallery);
PairRecord to_record(const PairSample& pair, bool embed_image = false);

}  // namespace coffar

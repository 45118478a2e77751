#include "coffar/pair_data.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <tuple>

#include "coffar/error.hpp"
#include "coffar/image_io.hpp"
#include "coffar/json_io.hpp"

namespace fs = std::filesystem;

namespace coffar {

Gallery::Gallery(std::vector<Identity> identities, std::string source)
    : ids_(std::move(identities)), source_(std::move(source)) {
  if (ids_.empty()) throw Error(ErrorKind::Gallery, "empty gallery: no identities");
  std::sort(ids_.begin(), ids_.end(),
            [](const Identity& a, const Identity& b) { return a.id < b.id; });
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    if (i > 0 && ids_[i].id == ids_[i - 1].id) {
      throw Error(ErrorKind::Gallery, "duplicate identity id '" + ids_[i].id + "'");
    }
    if (ids_[i].images.empty()) {
      throw Error(ErrorKind::Gallery, "identity '" + ids_[i].id + "' has no images");
    }
    for (const auto& img : ids_[i].images) {
      if (img.shape() != std::vector<std::size_t>{kFaceSide, kFaceSide}) {
        throw Error(ErrorKind::Gallery, "identity '" + ids_[i].id + "' has a " +
                                            shape_string(img.shape()) + " image, need 20x20");
      }
    }
  }
}

std::optional<std::size_t> Gallery::find(std::string_view id) const {
  auto it = std::lower_bound(ids_.begin(), ids_.end(), id,
                             [](const Identity& a, std::string_view k) { return a.id < k; });
  if (it == ids_.end() || it->id != id) return std::nullopt;
  return static_cast<std::size_t>(it - ids_.begin());
}

CountFormulas count_formulas(std::uint64_t x, std::uint64_t n) {
  if (x == 0 || n == 0) return {};
  const std::uint64_t n_d = x * x * (n - 1);
  return {x * (x - 1) * n, n_d, n_d * n};
}

DatasetStats gallery_stats(const Gallery& gallery) {
  DatasetStats s;
  s.n_ids = gallery.size();
  std::uint64_t total = 0, sq = 0;
  for (const auto& id : gallery.identities()) {
    const std::uint64_t x = id.images.size();
    s.imgs_per_id.push_back(id.images.size());
    s.n_s += x * (x - 1);
    total += x;
    sq += x * x;
  }
  s.n_a = total * total - sq;
  const bool uniform = std::all_of(s.imgs_per_id.begin(), s.imgs_per_id.end(),
                                   [&](std::size_t x) { return x == s.imgs_per_id.front(); });
  if (uniform) {
    s.uniform_imgs = s.imgs_per_id.front();
    s.n_d = count_formulas(*s.uniform_imgs, s.n_ids).n_d;
  }
  return s;
}

std::string DatasetStats::summary() const {
  std::ostringstream os;
  os << "same=" << n_same << " diff=" << n_diff << " N_s=" << n_s;
  if (n_d) os << " N_d=" << *n_d;
  os << " N_a=" << n_a;
  return os.str();
}

// ---------------------------------------------------------------------------

Gallery load_gallery(const fs::path& root) {
  if (!fs::is_directory(root)) {
    throw Error(ErrorKind::Gallery, "gallery directory not found: " + root.string());
  }
  std::vector<fs::path> id_dirs;
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory()) id_dirs.push_back(e.path());
  }
  std::sort(id_dirs.begin(), id_dirs.end());

  std::vector<Identity> ids;
  std::size_t skipped = 0, dropped = 0;
  for (const auto& dir : id_dirs) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(dir)) {
      if (e.is_regular_file()) files.push_back(e.path());
    }
    std::sort(files.begin(), files.end());
    Identity ident{dir.filename().string(), {}};
    for (const auto& f : files) {
      try {
        ident.images.push_back(to_square(read_gray_image(f), kFaceSide));
      } catch (const Error& e) {
        spdlog::warn("skipping unreadable image {}", e.what());
        ++skipped;
      }
    }
    if (ident.images.empty()) {
      spdlog::warn("dropping identity '{}': no readable images", ident.id);
      ++dropped;
      continue;
    }
    ids.push_back(std::move(ident));
  }
  if (ids.empty()) throw Error(ErrorKind::Gallery, "empty gallery: " + root.string());
  Gallery g(std::move(ids), root.string());
  g.skipped_files = skipped;
  g.dropped_identities = dropped;
  spdlog::info("loaded gallery {}: {} identities, {} files skipped", root.string(), g.size(),
               skipped);
  return g;
}

void save_gallery(const Gallery& gallery, const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw Error(ErrorKind::Io, "cannot create " + root.string() + ": " + ec.message());
  for (const auto& id : gallery.identities()) {
    const fs::path dir = root / id.id;
    fs::create_directories(dir, ec);
    if (ec) throw Error(ErrorKind::Io, "cannot create " + dir.string() + ": " + ec.message());
    for (std::size_t i = 0; i < id.images.size(); ++i) {
      char name[32];
      std::snprintf(name, sizeof name, "img_%03zu.pgm", i);
      write_pgm(dir / name, id.images[i]);
    }
  }
}

Tensor concat_pair(const Tensor& a, const Tensor& b) {
  const std::vector<std::size_t> face{kFaceSide, kFaceSide};
  if (a.shape() != face || b.shape() != face) {
    throw Error(ErrorKind::InvalidShape, "concat_pair needs two 20x20 images, got " +
                                             shape_string(a.shape()) + " and " +
                                             shape_string(b.shape()));
  }
  Tensor out = Tensor::matrix(kPairRows, kPairCols);
  for (std::size_t r = 0; r < kFaceSide; ++r) {
    for (std::size_t c = 0; c < kFaceSide; ++c) {
      out.at(r, c) = a.at(r, c);
      out.at(r, c + kFaceSide) = b.at(r, c);
    }
  }
  return out;
}

PairSample make_pair(const Gallery& gallery, std::size_t id_a, std::size_t idx_a,
                     std::size_t id_b, std::size_t idx_b) {
  const Identity& a = gallery[id_a];
  const Identity& b = gallery[id_b];
  return PairSample{concat_pair(a.images.at(idx_a), b.images.at(idx_b)),
                    id_a == id_b ? PairLabel::Same : PairLabel::Different,
                    Provenance{a.id, idx_a, b.id, idx_b}};
}

// ---------------------------------------------------------------------------

SymmetricDataset generate_symmetric(const Gallery& gallery, std::uint64_t seed,
                                    const SymmetricOptions& options) {
  if (gallery.size() < 2) {
    throw Error(ErrorKind::Generation,
                "cannot generate different pairs from a single-identity gallery");
  }
  SymmetricDataset ds;
  ds.stats = gallery_stats(gallery);
  if (ds.stats.n_s == 0) {
    throw Error(ErrorKind::Generation, "zero same pairs: every identity has a single image");
  }
  if (options.dedupe_different && ds.stats.n_s > ds.stats.n_a) {
    throw Error(ErrorKind::Generation, "not enough distinct different pairs to deduplicate");
  }

  auto& pairs = ds.pairs;
  pairs.reserve(2 * ds.stats.n_s);
  for (std::size_t id = 0; id < gallery.size(); ++id) {
    const std::size_t x = gallery[id].images.size();
    for (std::size_t i = 0; i < x; ++i) {
      for (std::size_t j = 0; j < x; ++j) {
        if (i != j) pairs.push_back(make_pair(gallery, id, i, id, j));
      }
    }
  }
  const std::size_t n_same = pairs.size();

  Rng rng(seed);
  const std::uint64_t n = gallery.size();
  std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t>> seen;
  while (pairs.size() < 2 * n_same) {
    const auto a = static_cast<std::size_t>(rng.uniform_int(n));
    std::size_t b;
    do {
      b = static_cast<std::size_t>(rng.uniform_int(n));
    } while (b == a);
    const auto ia = static_cast<std::size_t>(rng.uniform_int(gallery[a].images.size()));
    const auto ib = static_cast<std::size_t>(rng.uniform_int(gallery[b].images.size()));
    if (options.dedupe_different && !seen.emplace(a, ia, b, ib).second) continue;
    pairs.push_back(make_pair(gallery, a, ia, b, ib));
  }
  rng.shuffle(std::span(pairs));

  ds.stats.n_same = n_same;
  ds.stats.n_diff = pairs.size() - n_same;
  return ds;
}

ExhaustiveStream::ExhaustiveStream(const Gallery& gallery, std::uint64_t seed)
    : gallery_(&gallery), rng_(seed) {
  if (gallery.size() < 2) {
    throw Error(ErrorKind::Generation,
                "cannot generate different pairs from a single-identity gallery");
  }
  for (std::size_t i = 0; i < gallery.size(); ++i) {
    if (gallery[i].images.size() >= 2) multi_image_ids_.push_back(i);
  }
  if (multi_image_ids_.empty()) {
    throw Error(ErrorKind::Generation, "zero same pairs: every identity has a single image");
  }
}

PairSample ExhaustiveStream::next() {
  const Gallery& g = *gallery_;
  PairSample s;
  if (count_ % 2 == 0) {
    // Same pair; only identities with at least two images are eligible.
    const std::size_t id = multi_image_ids_[rng_.uniform_int(multi_image_ids_.size())];
    const std::size_t x = g[id].images.size();
    const auto i = static_cast<std::size_t>(rng_.uniform_int(x));
    std::size_t j;
    do {
      j = static_cast<std::size_t>(rng_.uniform_int(x));
    } while (j == i);
    s = make_pair(g, id, i, id, j);
  } else {
    const std::uint64_t n = g.size();
    const auto a = static_cast<std::size_t>(rng_.uniform_int(n));
    std::size_t b;
    do {
      b = static_cast<std::size_t>(rng_.uniform_int(n));
    } while (b == a);
    s = make_pair(g, a, rng_.uniform_int(g[a].images.size()), b,
                  rng_.uniform_int(g[b].images.size()));
  }
  ++count_;
  return s;
}

void ExhaustiveStream::restore(const State& s) {
  rng_ = Rng::from_state(s.rng);
  count_ = s.count;
}

// ---------------------------------------------------------------------------

Gallery synth_gallery(const SynthOptions& o) {
  if (o.n_ids < 1 || o.imgs_per_id < 1) {
    throw Error(ErrorKind::InvalidArgument, "synth_gallery: n_ids and imgs_per_id must be >= 1");
  }
  if (!(o.noise_level >= 0.0 && o.noise_level <= 0.5)) {
    throw Error(ErrorKind::InvalidArgument, "synth_gallery: noise_level must be in [0, 0.5]");
  }
  if (o.max_shift < 0 || o.max_shift >= static_cast<int>(kFaceSide)) {
    throw Error(ErrorKind::InvalidArgument, "synth_gallery: max_shift out of range");
  }
  // 3x3 control grid: coarse enough that identity structure survives two
  // 2x2 poolings of the default model.
  constexpr std::size_t kCoarse = 3;
  const int side = static_cast<int>(kFaceSide);
  const std::size_t width = std::max<std::size_t>(3, std::to_string(o.n_ids - 1).size());

  Rng rng(o.seed);
  std::vector<Identity> ids;
  for (std::size_t k = 0; k < o.n_ids; ++k) {
    Tensor coarse = Tensor::matrix(kCoarse, kCoarse);
    for (double& v : coarse.data()) v = rng.uniform01();
    Tensor base = resize_bilinear(coarse, kFaceSide, kFaceSide);
    // Stretch each identity's field to span [0.2, 0.8] exactly.
    const auto [lo, hi] = std::minmax_element(base.data().begin(), base.data().end());
    const double vmin = *lo, range = *hi - *lo;
    for (double& v : base.data()) v = range > 0.0 ? 0.2 + 0.6 * (v - vmin) / range : 0.5;

    std::string name = std::to_string(k);
    Identity ident{"id_" + std::string(width - name.size(), '0') + name, {}};
    const auto span = static_cast<std::uint64_t>(2 * o.max_shift + 1);
    for (std::size_t m = 0; m < o.imgs_per_id; ++m) {
      const int dy = static_cast<int>(rng.uniform_int(span)) - o.max_shift;
      const int dx = static_cast<int>(rng.uniform_int(span)) - o.max_shift;
      Tensor img = Tensor::matrix(kFaceSide, kFaceSide);
      for (int r = 0; r < side; ++r) {
        for (int c = 0; c < side; ++c) {
          const int sr = std::clamp(r - dy, 0, side - 1);
          const int sc = std::clamp(c - dx, 0, side - 1);
          const double noise = rng.uniform(-o.noise_level, o.noise_level);
          img.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = std::clamp(
              base.at(static_cast<std::size_t>(sr), static_cast<std::size_t>(sc)) + noise, 0.0,
              1.0);
        }
      }
      ident.images.push_back(std::move(img));
    }
    ids.push_back(std::move(ident));
  }
  return Gallery(std::move(ids), "synthetic");
}

namespace {

std::uint64_t fnv1a(std::string_view s, std::uint64_t h) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

PairSplit split_by_provenance(std::vector<PairSample> pairs, double heldout_fraction,
                              std::uint64_t seed) {
  if (!(heldout_fraction >= 0.0 && heldout_fraction <= 1.0)) {
    throw Error(ErrorKind::InvalidArgument, "held-out fraction must be in [0,1]");
  }
  PairSplit split;
  for (auto& p : pairs) {
    auto a = std::make_pair(p.provenance.id_a, p.provenance.idx_a);
    auto b = std::make_pair(p.provenance.id_b, p.provenance.idx_b);
    if (b < a) std::swap(a, b);
    std::uint64_t h = 0xcbf29ce484222325ULL;
    h = fnv1a(a.first, h);
    h = fnv1a(std::to_string(a.second) + "|", h);
    h = fnv1a(b.first, h);
    h = fnv1a(std::to_string(b.second), h);
    const double u = static_cast<double>(derive_seed(seed ^ h, "split") >> 11) * 0x1.0p-53;
    (u < heldout_fraction ? split.heldout : split.train).push_back(std::move(p));
  }
  return split;
}

// ---------------------------------------------------------------------------

PairRecord to_record(const PairSample& pair, bool embed_image) {
  PairRecord r{pair.label, pair.provenance, std::nullopt};
  if (embed_image) r.image = pair.image;
  return r;
}

void write_pair_manifest(std::span<const PairSample> pairs, const fs::path& path,
                         const ManifestOptions& options) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::Io, "cannot write " + path.string());
  for (const auto& p : pairs) {
    Json j{{"label", to_string(p.label)},
           {"id_a", p.provenance.id_a},
           {"idx_a", p.provenance.idx_a},
           {"id_b", p.provenance.id_b},
           {"idx_b", p.provenance.idx_b}};
    if (options.embed_images) j["image"] = p.image.values();
    out << j.dump() << '\n';
  }
  if (!out) throw Error(ErrorKind::Io, "write failed for " + path.string());
}

std::vector<PairRecord> read_pair_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::Io, "cannot open " + path.string());
  std::vector<PairRecord> records;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = path.string() + ":" + std::to_string(lineno);
    try {
      const Json j = Json::parse(line);
      try {
        reject_unknown_keys(j, {"label", "id_a", "idx_a", "id_b", "idx_b", "image"}, where);
      } catch (const Error& e) {
        throw Error(ErrorKind::MalformedManifest, e.what());
      }
      PairRecord r;
      r.label = parse_label(j.at("label").get<std::string>());
      r.provenance = {j.at("id_a").get<std::string>(), j.at("idx_a").get<std::size_t>(),
                      j.at("id_b").get<std::string>(), j.at("idx_b").get<std::size_t>()};
      const bool same_id = r.provenance.id_a == r.provenance.id_b;
      if (same_id != (r.label == PairLabel::Same)) {
        throw Error(ErrorKind::MalformedManifest,
                    where + ": label '" + std::string(to_string(r.label)) +
                        "' inconsistent with ids");
      }
      if (j.contains("image")) {
        Tensor img({kPairRows, kPairCols}, j["image"].get<std::vector<double>>());
        check_pair_image(img);
        r.image = std::move(img);
      }
      records.push_back(std::move(r));
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::MalformedManifest) throw;
      throw Error(ErrorKind::MalformedManifest, where + ": " + e.what());
    } catch (const Json::exception& e) {
      throw Error(ErrorKind::MalformedManifest, where + ": " + e.what());
    }
  }
  return records;
}

std::vector<PairSample> resolve_pairs(std::span<const PairRecord> records,
                                      const Gallery* gallery) {
  std::vector<PairSample> out;
  out.reserve(records.size());
  for (const auto& r : records) {
    if (r.image) {
      out.push_back(PairSample{*r.image, r.label, r.provenance});
      continue;
    }
    if (gallery == nullptr) {
      throw Error(ErrorKind::Resolution, "pair references identity '" + r.provenance.id_a +
                                             "' but no gallery was given");
    }
    const auto lookup = [&](const std::string& id, std::size_t idx) {
      const auto pos = gallery->find(id);
      if (!pos) throw Error(ErrorKind::Resolution, "unknown identity '" + id + "'");
      if (idx >= (*gallery)[*pos].images.size()) {
        throw Error(ErrorKind::Resolution, "identity '" + id + "' has no image " +
                                               std::to_string(idx));
      }
      return *pos;
    };
    const std::size_t a = lookup(r.provenance.id_a, r.provenance.idx_a);
    const std::size_t b = lookup(r.provenance.id_b, r.provenance.idx_b);
    out.push_back(make_pair(*gallery, a, r.provenance.idx_a, b, r.provenance.idx_b));
  }
  return out;
}

}  // namespace coffar

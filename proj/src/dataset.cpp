#include "salcar/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <set>
#include <sstream>
#include <thread>

#include "salcar/errors.hpp"

namespace salcar {
namespace {

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> row;
  std::string field;
  bool quoted = false, any = false;
  for (std::size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (quoted) {
      if (ch == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          field += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field += ch;
      }
      continue;
    }
    if (ch == '"') {
      quoted = true;
      any = true;
    } else if (ch == ',') {
      row.push_back(std::move(field));
      field.clear();
      any = true;
    } else if (ch == '\n' || ch == '\r') {
      if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
      if (any || !field.empty()) {
        row.push_back(std::move(field));
        rows.push_back(std::move(row));
      }
      row.clear();
      field.clear();
      any = false;
    } else {
      field += ch;
      any = true;
    }
  }
  if (quoted) throw IoError("manifest: unterminated quoted field");
  if (any || !field.empty()) {
    row.push_back(std::move(field));
    rows.push_back(std::move(row));
  }
  return rows;
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::vector<ManifestEntry> parse_manifest(const std::string& text, const std::filesystem::path& base_dir) {
  auto rows = parse_csv(text);
  if (rows.empty()) throw IoError("manifest is empty");
  std::map<std::string, std::size_t> col;
  for (std::size_t i = 0; i < rows[0].size(); ++i) {
    std::string name = rows[0][i];
    if (i == 0 && name.rfind("\xEF\xBB\xBF", 0) == 0) name.erase(0, 3);
    col[name] = i;
  }
  for (const char* required : {"image_id", "reference_path", "distorted_path", "raw_score"}) {
    if (!col.contains(required)) throw IoError(std::string("manifest: missing column '") + required + "'");
  }
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
  };
  std::vector<ManifestEntry> out;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& row = rows[r];
    auto get = [&](const std::string& name) -> std::string {
      auto it = col.find(name);
      if (it == col.end() || it->second >= row.size()) return {};
      return row[it->second];
    };
    const std::string where = "manifest row " + std::to_string(r + 1);
    ManifestEntry e;
    e.image_id = get("image_id");
    const std::string ref = get("reference_path"), dst = get("distorted_path");
    if (e.image_id.empty() || ref.empty() || dst.empty()) throw IoError(where + ": id and paths must be non-empty");
    e.reference_key = ref;
    e.reference_path = resolve(ref);
    e.distorted_path = resolve(dst);
    if (auto s = get("saliency_path"); !s.empty()) e.saliency_path = resolve(s);
    if (auto j = get("jnd_path"); !j.empty()) e.jnd_path = resolve(j);
    e.distortion_type = get("distortion_type");
    try {
      std::size_t used = 0;
      const std::string raw = get("raw_score");
      e.raw_score = std::stod(raw, &used);
      if (used != raw.size()) throw std::invalid_argument(raw);
    } catch (const std::exception&) {
      throw IoError(where + ": raw_score is not a number");
    }
    if (!std::isfinite(e.raw_score)) throw IoError(where + ": raw_score must be finite");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ManifestEntry> read_manifest(const std::filesystem::path& path) {
  return parse_manifest(read_text(path), path.parent_path());
}

std::vector<double> normalize_scores(std::span<const double> raw, ScorePolarity polarity) {
  if (raw.empty()) throw ShapeError("normalize_scores: no scores");
  const auto [lo, hi] = std::minmax_element(raw.begin(), raw.end());
  if (!(*hi > *lo)) throw NumericError("normalize_scores: all raw scores are equal (degenerate range)");
  std::vector<double> out;
  out.reserve(raw.size());
  for (double r : raw) {
    double t = (r - *lo) / (*hi - *lo);
    if (polarity == ScorePolarity::dmos) t = 1.0 - t;
    out.push_back(std::clamp(9.0 * t, 0.0, 9.0));
  }
  return out;
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train:
      return "train";
    case Split::val:
      return "val";
    case Split::test:
      return "test";
  }
  return "train";
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ConfigError("unknown split '" + s + "' (expected train, val or test)");
}

SplitCounts parse_split_counts(const std::string& text) {
  std::vector<std::size_t> parts;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, '/')) {
    try {
      std::size_t used = 0;
      const long v = std::stol(item, &used);
      if (used != item.size() || v < 0) throw std::invalid_argument(item);
      parts.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw ConfigError("split ratios must look like 15/5/5, got '" + text + "'");
    }
  }
  if (parts.size() != 3) throw ConfigError("split ratios must have three parts, got '" + text + "'");
  return {parts[0], parts[1], parts[2]};
}

SplitPlan split_by_reference(std::span<const std::string> reference_ids, const SplitCounts& counts,
                             std::uint64_t seed) {
  std::set<std::string> unique(reference_ids.begin(), reference_ids.end());
  std::vector<std::string> ids(unique.begin(), unique.end());
  if (counts.total() > ids.size()) {
    throw ConfigError("split counts (" + std::to_string(counts.total()) + ") exceed the " +
                      std::to_string(ids.size()) + " available references");
  }
  if (counts.total() < ids.size()) {
    throw ConfigError("split counts (" + std::to_string(counts.total()) + ") do not cover all " +
                      std::to_string(ids.size()) + " references");
  }
  std::mt19937_64 rng(seed);
  std::shuffle(ids.begin(), ids.end(), rng);
  SplitPlan plan;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    plan[ids[i]] = i < counts.train ? Split::train : i < counts.train + counts.val ? Split::val : Split::test;
  }
  return plan;
}

void save_split_plan(const std::filesystem::path& path, const SplitPlan& plan) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open " + path.string() + " for writing");
  f << "reference_id,split\n";
  for (const auto& [id, split] : plan) {
    std::string quoted = "\"";
    for (char ch : id) quoted += ch == '"' ? std::string("\"\"") : std::string(1, ch);
    f << quoted << "\"," << to_string(split) << "\n";
  }
  if (!f) throw IoError("failed writing " + path.string());
}

SplitPlan load_split_plan(const std::filesystem::path& path) {
  auto rows = parse_csv(read_text(path));
  if (rows.empty() || rows[0].size() < 2 || rows[0][0] != "reference_id" || rows[0][1] != "split") {
    throw IoError("split plan " + path.string() + ": expected header reference_id,split");
  }
  SplitPlan plan;
  for (std::size_t r = 1; r < rows.size(); ++r) {
    if (rows[r].size() < 2) throw IoError("split plan " + path.string() + ": short row " + std::to_string(r + 1));
    if (!plan.emplace(rows[r][0], parse_split(rows[r][1])).second) {
      throw IoError("split plan " + path.string() + ": reference listed twice: " + rows[r][0]);
    }
  }
  return plan;
}

Tensor rescale_image(const ColorImage& img, std::size_t channels) {
  if (channels == 3) {
    Tensor out({3, img.height, img.width});
    for (std::size_t i = 0; i < img.data.size(); ++i) out[i] = img.data[i] / 255.0f - 0.5f;
    return out;
  }
  if (channels == 1) {
    const GrayImage luma = to_luma(img);
    Tensor out({1, img.height, img.width});
    for (std::size_t i = 0; i < luma.size(); ++i) out[i] = luma.values[i] / 255.0f - 0.5f;
    return out;
  }
  throw ShapeError("rescale_image: channels must be 1 or 3");
}

void QuadSource::validate() const {
  if (reference.rank() != 3 || reference.shape() != distorted.shape()) {
    throw ShapeError("quad source: reference and distorted images must be C x H x W of equal shape");
  }
  const std::size_t h = height(), w = width();
  if (saliency.height != h || saliency.width != w || jnd.height != h || jnd.width != w) {
    throw ShapeError("quad source: prior map dimensions must match the reference image");
  }
}

PatchQuad cut_quad(const QuadSource& src, std::size_t row, std::size_t col, std::size_t patch) {
  const std::size_t c = src.reference.dim(0), h = src.height(), w = src.width();
  if (row + patch > h || col + patch > w) throw ShapeError("cut_quad: patch outside the image");
  PatchQuad q;
  q.row = row;
  q.col = col;
  q.ref_patch = Tensor({c, patch, patch});
  q.dst_patch = Tensor({c, patch, patch});
  q.sal_patch = Tensor({1, patch, patch});
  q.jnd_patch = Tensor({1, patch, patch});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < patch; ++y) {
      const std::size_t s = (ch * h + row + y) * w + col;
      const std::size_t d = (ch * patch + y) * patch;
      std::copy_n(src.reference.data().data() + s, patch, q.ref_patch.data().data() + d);
      std::copy_n(src.distorted.data().data() + s, patch, q.dst_patch.data().data() + d);
    }
  }
  for (std::size_t y = 0; y < patch; ++y) {
    std::copy_n(src.saliency.values.data() + (row + y) * w + col, patch, q.sal_patch.data().data() + y * patch);
    std::copy_n(src.jnd.values.data() + (row + y) * w + col, patch, q.jnd_patch.data().data() + y * patch);
  }
  return q;
}

std::vector<PatchQuad> sample_training_quads(const QuadSource& src, std::size_t n, std::uint64_t seed,
                                             std::size_t patch) {
  src.validate();
  if (src.height() < patch || src.width() < patch) {
    throw ShapeError("sample_training_quads: image smaller than one " + std::to_string(patch) + "px patch");
  }
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> rows(0, src.height() - patch), cols(0, src.width() - patch);
  std::vector<PatchQuad> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t r = rows(rng);
    const std::size_t c = cols(rng);
    out.push_back(cut_quad(src, r, c, patch));
  }
  return out;
}

std::vector<PatchQuad> tile_validation_quads(const QuadSource& src, std::size_t patch) {
  src.validate();
  const std::size_t gy = src.height() / patch, gx = src.width() / patch;
  if (gy == 0 || gx == 0) {
    throw ShapeError("tile_validation_quads: image smaller than one " + std::to_string(patch) + "px patch");
  }
  std::vector<PatchQuad> out;
  out.reserve(gy * gx);
  for (std::size_t y = 0; y < gy; ++y) {
    for (std::size_t x = 0; x < gx; ++x) out.push_back(cut_quad(src, y * patch, x * patch, patch));
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9E3779B97F4A7C15ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ a) ^ b);
}

QuadSource make_quad_source(const ColorImage& ref, const ColorImage& dst, const TrainConfig& cfg,
                            std::size_t channels, const PriorMap* saliency, const PriorMap* jnd) {
  if (ref.width != dst.width || ref.height != dst.height) {
    throw ShapeError("reference and distorted images differ in size");
  }
  QuadSource s;
  s.reference = rescale_image(ref, channels);
  s.distorted = rescale_image(dst, channels);
  const GrayImage ref_luma = to_luma(ref);
  s.saliency = saliency ? *saliency : compute_saliency_mbd(ref_luma, cfg.saliency_passes);
  s.jnd = jnd ? *jnd : compute_jnd_probability(ref_luma, to_luma(dst), cfg.jnd);
  s.validate();
  return s;
}

QuadSource load_quad_source(const ManifestEntry& entry, const TrainConfig& cfg, std::size_t channels) {
  const ColorImage ref = load_color_image(entry.reference_path);
  const ColorImage dst = load_color_image(entry.distorted_path);
  std::optional<PriorMap> sal, jnd;
  if (entry.saliency_path) sal = load_prior(*entry.saliency_path);
  if (entry.jnd_path) jnd = load_prior(*entry.jnd_path);
  return make_quad_source(ref, dst, cfg, channels, sal ? &*sal : nullptr, jnd ? &*jnd : nullptr);
}

std::vector<ImageRecord> load_records(const std::vector<ManifestEntry>& entries, const TrainConfig& cfg,
                                      std::size_t channels, std::size_t threads) {
  std::vector<double> raw;
  for (const auto& e : entries) raw.push_back(e.raw_score);
  const auto scores = normalize_scores(raw, cfg.polarity);
  std::vector<ImageRecord> out(entries.size());
  std::vector<std::exception_ptr> errors(entries.size());
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < entries.size(); i += step) {
      try {
        out[i].entry = entries[i];
        out[i].score = scores[i];
        out[i].source = load_quad_source(entries[i], cfg, channels);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, entries.size()));
  if (threads == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work, t, threads);
  }
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace salcar

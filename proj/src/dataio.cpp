#include "geofm/dataio.hpp"

#include "geofm/binio.hpp"

#include <json.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <sstream>
#include <unordered_map>

namespace geofm {

namespace fs = std::filesystem;

namespace {

const binio::Magic kVmapMagic = binio::make_magic("GFMVMAP");
constexpr int kCacheFormat = 1;

std::uint64_t fnv1a(std::uint64_t h, const void* data, std::size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string params_key(const PreprocessParams& p) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "format=%d target_n=%lld k=%lld bins=%d radius=%.17g", kCacheFormat,
                static_cast<long long>(p.target_n), static_cast<long long>(p.k), p.shot_bins, p.shot_radius_fraction);
  return buf;
}

template <typename F>
auto stage(const fs::path& path, const char* name, F&& body) {
  try {
    return body();
  } catch (const Error& e) {
    throw Error(e.kind(), "preprocess " + path.string() + " [" + name + "]: " + e.what());
  }
}

void write_indices(binio::Writer& w, const std::vector<Index>& v) {
  std::vector<std::int64_t> tmp(v.begin(), v.end());
  w.i64_array(tmp);
}

std::vector<Index> read_indices(binio::Reader& r, std::size_t n) {
  std::vector<std::int64_t> tmp(n);
  r.i64_array(tmp);
  return {tmp.begin(), tmp.end()};
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp);
    out << text;
    if (!out) throw_data("cannot write " + tmp.string());
  }
  fs::rename(tmp, path);
}

}  // namespace

std::string content_hash(const fs::path& mesh_path, const PreprocessParams& params) {
  std::ifstream in(mesh_path, std::ios::binary);
  if (!in) throw_data("cannot open mesh file " + mesh_path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    h = fnv1a(h, buf, static_cast<std::size_t>(in.gcount()));
  }
  const std::string key = params_key(params);
  h = fnv1a(h, key.data(), key.size());
  char hex[17];
  std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
  return hex;
}

void save_bundle(const ShapeBundle& b, const PreprocessParams& params, const fs::path& dir) {
  fs::create_directories(dir);
  const fs::path mesh_tmp = dir / "mesh.tmp.ply";
  save_mesh(b.mesh, mesh_tmp);
  fs::rename(mesh_tmp, dir / "mesh.ply");
  save_basis(b.basis, dir / "basis.bin");
  save_distances(b.distances, dir / "dist.bin");
  save_descriptors(b.shot, dir / "shot.bin");
  binio::Writer w(dir / "vmap.bin");
  w.magic(kVmapMagic);
  w.u64(b.vertex_map.size());
  w.u64(b.representatives.size());
  write_indices(w, b.vertex_map);
  write_indices(w, b.representatives);
  w.commit();
  nlohmann::json meta = {{"format", kCacheFormat},
                         {"content_hash", b.content_hash},
                         {"source", b.source_path.string()},
                         {"target_n", params.target_n},
                         {"k", params.k},
                         {"shot_bins", params.shot_bins},
                         {"shot_radius_fraction", params.shot_radius_fraction},
                         {"n", b.size()},
                         {"n_original", b.original_size()},
                         {"diameter", b.distances.diameter}};
  // written last: its presence marks a complete bundle
  write_text_atomic(dir / "meta.json", meta.dump(2) + "\n");
}

ShapeBundle load_bundle(const fs::path& dir) {
  std::ifstream in(dir / "meta.json");
  if (!in) throw_data("no cached bundle in " + dir.string());
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw_data("corrupt bundle metadata in " + dir.string() + ": " + e.what());
  }
  ShapeBundle b;
  try {
    if (meta.at("format").get<int>() != kCacheFormat) throw_data("unsupported bundle format in " + dir.string());
    b.content_hash = meta.at("content_hash").get<std::string>();
    b.source_path = meta.at("source").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw_data("corrupt bundle metadata in " + dir.string() + ": " + e.what());
  }
  b.mesh = load_mesh(dir / "mesh.ply");
  b.basis = load_basis(dir / "basis.bin");
  b.distances = load_distances(dir / "dist.bin");
  b.shot = load_descriptors(dir / "shot.bin");
  binio::Reader r(dir / "vmap.bin");
  r.expect_magic(kVmapMagic);
  const auto n_orig = r.u64(), n_low = r.u64();
  b.vertex_map = read_indices(r, n_orig);
  b.representatives = read_indices(r, n_low);
  r.expect_end();
  const Index n = b.size();
  if (b.basis.size() != n || b.distances.size() != n || b.shot.size() != n || static_cast<Index>(n_low) != n)
    throw_data("inconsistent component sizes in cached bundle " + dir.string());
  return b;
}

ShapeBundle preprocess(const fs::path& mesh_path, const PreprocessParams& params, const fs::path& cache_dir,
                       StageCounters* counters, bool* from_cache, unsigned threads) {
  if (params.target_n < 3) throw_usage("target_n must be at least 3");
  if (params.k < 1) throw_usage("k must be positive");
  if (params.shot_bins < 1) throw_usage("shot_bins must be positive");
  if (!(params.shot_radius_fraction > 0.0)) throw_usage("shot radius fraction must be positive");
  const std::string hash = stage(mesh_path, "hash", [&] { return content_hash(mesh_path, params); });
  const fs::path dir = cache_dir.empty() ? fs::path() : cache_dir / hash;
  if (from_cache) *from_cache = false;
  if (!dir.empty() && fs::exists(dir / "meta.json")) {
    try {
      ShapeBundle b = load_bundle(dir);
      if (b.content_hash == hash) {
        if (counters) ++counters->cache_hits;
        if (from_cache) *from_cache = true;
        return b;
      }
    } catch (const Error& e) {
      spdlog::warn("ignoring unreadable cache entry {}: {}", dir.string(), e.what());
    }
  }

  ShapeBundle b;
  b.source_path = mesh_path;
  b.content_hash = hash;
  const TriMesh full = stage(mesh_path, "load", [&] { return load_mesh(mesh_path); });
  stage(mesh_path, "simplify", [&] {
    if (full.num_vertices() > params.target_n) {
      if (counters) ++counters->simplify;
      auto s = simplify(full, params.target_n);
      b.mesh = std::move(s.mesh);
      b.vertex_map = std::move(s.vertex_map);
      b.representatives = representatives(full, b.mesh, b.vertex_map);
    } else {
      b.mesh = full;
      b.vertex_map = identity_permutation(full.num_vertices());
      b.representatives = b.vertex_map;
    }
    return 0;
  });
  b.basis = stage(mesh_path, "basis", [&] {
    if (counters) ++counters->basis;
    return eig_basis(b.mesh, params.k);
  });
  b.distances = stage(mesh_path, "distances", [&] {
    if (counters) ++counters->distances;
    return distance_matrix(b.mesh, 20000, threads);
  });
  b.shot = stage(mesh_path, "descriptors", [&] {
    if (counters) ++counters->descriptors;
    return shot_descriptors(b.mesh, default_radius(b.distances, params.shot_radius_fraction), params.shot_bins, nullptr,
                            threads);
  });
  if (!dir.empty()) stage(mesh_path, "cache", [&] {
      save_bundle(b, params, dir);
      return 0;
    });
  return b;
}

std::vector<ManifestEntry> read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open manifest " + path.string());
  const fs::path base = path.parent_path();
  auto resolve = [&](const std::string& p) { return fs::path(p).is_absolute() || base.empty() ? fs::path(p) : base / p; };
  std::vector<ManifestEntry> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string mesh, gt, extra;
    if (!(ls >> mesh)) continue;
    ManifestEntry e{resolve(mesh), std::nullopt};
    if (ls >> gt) e.ground_truth = resolve(gt);
    if (ls >> extra) throw_data(path.string() + ":" + std::to_string(lineno) + ": expected 'mesh_path [gt_path]'");
    out.push_back(std::move(e));
  }
  if (out.empty()) throw_data("manifest " + path.string() + " lists no shapes");
  return out;
}

PointMap load_ground_truth(const fs::path& path, Index n) {
  std::ifstream in(path);
  if (!in) throw_data("cannot open ground-truth file " + path.string());
  PointMap out;
  out.map.assign(static_cast<std::size_t>(n), kUnmatched);
  std::string line;
  int lineno = 0;
  bool any = false;
  auto fail = [&](const std::string& what) { throw_data(path.string() + ":" + std::to_string(lineno) + ": " + what); };
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string first;
    if (!(ls >> first)) continue;
    std::string extra;
    if (first == "identity") {
      long long count = -1;
      if (any || !(ls >> count) || (ls >> extra)) fail("expected 'identity n' as the only entry");
      if (count != n) fail("identity size " + std::to_string(count) + " does not match " + std::to_string(n) + " vertices");
      out.map = identity_permutation(n);
      out.bijective = true;
      any = true;
      continue;
    }
    if (out.bijective) fail("entries after 'identity'");
    long long s = 0, t = 0;
    try {
      std::size_t used = 0;
      s = std::stoll(first, &used);
      if (used != first.size()) throw std::invalid_argument(first);
    } catch (const std::exception&) {
      fail("malformed line '" + line + "'");
    }
    if (!(ls >> t) || (ls >> extra)) fail("malformed line '" + line + "'");
    if (s < 0 || s >= n) fail("source index " + std::to_string(s) + " out of range [0, " + std::to_string(n) + ")");
    if (t < 0 || t >= n) fail("target index " + std::to_string(t) + " out of range [0, " + std::to_string(n) + ")");
    out.map[static_cast<std::size_t>(s)] = static_cast<Index>(t);
    any = true;
  }
  if (!any) throw_data("ground-truth file " + path.string() + " is empty");
  return out;
}

std::vector<Index> compose_ground_truth(const ShapeBundle& x, const ShapeBundle& y) {
  if (!x.ground_truth || !y.ground_truth) throw_usage("both shapes need ground truth");
  const auto& gx = x.ground_truth->map;
  const auto& gy = y.ground_truth->map;
  if (static_cast<Index>(gx.size()) != x.original_size() || static_cast<Index>(gy.size()) != y.original_size())
    throw_data("ground truth size does not match the original mesh");
  std::unordered_map<Index, Index> label_to_y;
  for (std::size_t v = 0; v < gy.size(); ++v)
    if (gy[v] != kUnmatched) label_to_y.emplace(gy[v], static_cast<Index>(v));
  std::vector<Index> out(static_cast<std::size_t>(x.size()), kUnmatched);
  for (Index i = 0; i < x.size(); ++i) {
    const Index label = gx[static_cast<std::size_t>(x.representatives[static_cast<std::size_t>(i)])];
    if (label == kUnmatched) continue;
    const auto it = label_to_y.find(label);
    if (it == label_to_y.end()) continue;
    out[static_cast<std::size_t>(i)] = y.vertex_map[static_cast<std::size_t>(it->second)];
  }
  return out;
}

std::vector<Index> permute_ground_truth(const std::vector<Index>& gt, const std::vector<Index>& perm_x,
                                        const std::vector<Index>& perm_y) {
  const auto inv_y = invert_permutation(perm_y);
  std::vector<Index> out(perm_x.size());
  for (std::size_t r = 0; r < perm_x.size(); ++r) {
    const Index t = gt[static_cast<std::size_t>(perm_x[r])];
    out[r] = t == kUnmatched ? kUnmatched : inv_y[static_cast<std::size_t>(t)];
  }
  return out;
}

}  // namespace geofm

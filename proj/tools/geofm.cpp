#include "geofm/dataio.hpp"
#include "geofm/eval.hpp"
#include "geofm/parallel.hpp"
#include "geofm/refine.hpp"
#include "geofm/shapes.hpp"
#include "geofm/train.hpp"

#include "geofm/binio.hpp"

#include <CLI11.hpp>
#include <spdlog/spdlog.h>

#include <cstdio>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <unordered_map>

using namespace geofm;
namespace fs = std::filesystem;

namespace {

struct Common {
  std::uint64_t seed = 0;
  unsigned threads = 0;
  std::string precision = "float";
  bool verbose = false, quiet = false;
};

struct PrepOpts {
  PreprocessParams params;
  std::string cache = "cache";
};

void add_prep_options(CLI::App* cmd, PrepOpts& o) {
  cmd->add_option("--target-n", o.params.target_n, "Vertices after remeshing")->capture_default_str();
  cmd->add_option("--k", o.params.k, "Eigenfunctions")->capture_default_str();
  cmd->add_option("--shot-bins", o.params.shot_bins, "SHOT cosine bins")->capture_default_str();
  cmd->add_option("--shot-radius", o.params.shot_radius_fraction, "SHOT radius as a fraction of the geodesic diameter")
      ->capture_default_str();
  cmd->add_option("--cache", o.cache, "Cache directory")->capture_default_str();
}

ShapeBundle bundle_for(const fs::path& mesh, const PrepOpts& o, bool* cached = nullptr) {
  return preprocess(mesh, o.params, o.cache, nullptr, cached);
}

std::vector<ShapeBundle> load_dataset(const fs::path& manifest, const PrepOpts& o) {
  std::vector<ShapeBundle> out;
  for (const auto& e : read_manifest(manifest)) {
    ShapeBundle b = bundle_for(e.mesh, o);
    if (e.ground_truth) b.ground_truth = load_ground_truth(*e.ground_truth, b.original_size());
    out.push_back(std::move(b));
  }
  return out;
}

// The mesh a correspondence of size n refers to: the remeshed bundle or the original file.
TriMesh mesh_of_size(const fs::path& path, Index n, const PrepOpts& o) {
  TriMesh m = load_mesh(path);
  if (m.num_vertices() == n) return m;
  ShapeBundle b = bundle_for(path, o);
  if (b.size() == n) return b.mesh;
  throw_usage("neither " + path.string() + " (" + std::to_string(m.num_vertices()) + " vertices) nor its remeshed bundle (" +
              std::to_string(b.size()) + ") has " + std::to_string(n) + " vertices");
}

const binio::Magic kSoftMagic = binio::make_magic("GFMSOFT");

void save_soft_map(const MatrixXf& p, const fs::path& path) {
  binio::Writer w(path);
  w.magic(kSoftMagic);
  w.u64(static_cast<std::uint64_t>(p.rows()));
  w.u64(static_cast<std::uint64_t>(p.cols()));
  binio::write_rowmajor(w, p);
  w.commit();
}

MatrixXf load_soft_map(const fs::path& path) {
  binio::Reader r(path);
  r.expect_magic(kSoftMagic);
  const auto rows = static_cast<Index>(r.u64());
  const auto cols = static_cast<Index>(r.u64());
  MatrixXf p(rows, cols);
  binio::read_rowmajor(r, p);
  r.expect_end();
  return p;
}

// ---------------------------------------------------------------- commands

int run_preprocess(const fs::path& manifest, const PrepOpts& o) {
  const auto entries = read_manifest(manifest);
  std::printf("%-40s %8s %6s %4s %10s %-8s %s\n", "shape", "n_orig", "n", "k", "diameter", "status", "hash");
  for (const auto& e : entries) {
    bool cached = false;
    const ShapeBundle b = bundle_for(e.mesh, o, &cached);
    if (e.ground_truth) load_ground_truth(*e.ground_truth, b.original_size());
    std::printf("%-40s %8lld %6lld %4lld %10.5g %-8s %s\n", e.mesh.filename().string().c_str(),
                static_cast<long long>(b.original_size()), static_cast<long long>(b.size()),
                static_cast<long long>(b.basis.k()), b.distances.diameter, cached ? "cached" : "computed",
                b.content_hash.c_str());
  }
  return 0;
}

struct TrainOpts {
  TrainConfig cfg;
  std::string mode = "unsupervised";
  std::string init;
};

int run_train(const fs::path& manifest, PrepOpts prep, TrainOpts t, const Common& common) {
  if (t.mode == "unsupervised") t.cfg.mode = LossMode::unsupervised;
  else if (t.mode == "supervised") t.cfg.mode = LossMode::supervised;
  else throw_usage("unknown mode '" + t.mode + "' (unsupervised, supervised)");
  t.cfg.k = prep.params.k;
  t.cfg.seed = common.seed;
  t.cfg.threads = common.threads;
  t.cfg.validate();
  const auto dataset = load_dataset(manifest, prep);
  if (t.cfg.mode == LossMode::supervised)
    for (const auto& b : dataset)
      if (!b.ground_truth) throw_usage("supervised mode needs a ground-truth file for every shape in " + manifest.string());
  std::optional<Checkpoint> init;
  if (!t.init.empty()) init = load_checkpoint(t.init);
  spdlog::info("training on {} shapes, {} iterations, batch {}, k={}, {} precision", dataset.size(), t.cfg.iterations,
               t.cfg.batch_pairs, t.cfg.k, common.precision);
  const TrainResult r = common.precision == "double" ? train_loop<double>(dataset, t.cfg, init ? &*init : nullptr)
                                                     : train_loop<float>(dataset, t.cfg, init ? &*init : nullptr);
  if (!r.history.empty()) {
    const auto& first = r.history.front();
    const auto& last = r.history.back();
    std::printf("iterations %zu  unsup %.6g -> %.6g", r.history.size(), first.unsup, last.unsup);
    if (first.sup && last.sup) std::printf("  sup %.6g -> %.6g", *first.sup, *last.sup);
    std::printf("\n");
  }
  std::printf("checkpoint %s\n", t.cfg.checkpoint_path.string().c_str());
  return 0;
}

template <typename Scalar>
MatrixXf infer_soft(const Checkpoint& ck, const ShapeBundle& x, const ShapeBundle& y) {
  const auto tx = shape_tensors<Scalar>(x.basis, ck.k, x.shot.values, x.distances.d);
  const auto ty = shape_tensors<Scalar>(y.basis, ck.k, y.shot.values, y.distances.d);
  const auto params = ck.params.cast<Scalar>();
  return pipeline_soft_map(params, tx, ty, ck.ridge).p.template cast<float>();
}

int run_infer(const std::string& ckpt, const fs::path& xs, const fs::path& ys, const fs::path& out, const std::string& soft,
              const PrepOpts& prep, const Common& common) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const ShapeBundle x = bundle_for(xs, prep), y = bundle_for(ys, prep);
  for (const auto* b : {&x, &y}) {
    if (b->basis.k() < ck.k)
      throw_usage("checkpoint uses k=" + std::to_string(ck.k) + " but " + b->source_path.string() + " has a k=" +
                  std::to_string(b->basis.k()) + " basis; preprocess with --k " + std::to_string(ck.k));
    if (ck.params.depth() > 0 && ck.params.width() != b->shot.width())
      throw_usage("checkpoint width " + std::to_string(ck.params.width()) + " does not match descriptor width " +
                  std::to_string(b->shot.width()));
  }
  const MatrixXf p = common.precision == "double" ? infer_soft<double>(ck, x, y) : infer_soft<float>(ck, x, y);
  const PointMap map = extract_map(p);
  save_correspondence(map, y.size(), out);
  if (!soft.empty()) save_soft_map(p, soft);
  std::printf("wrote %s (%lld -> %lld vertices)\n", out.string().c_str(), static_cast<long long>(x.size()),
              static_cast<long long>(y.size()));
  return 0;
}

struct RefineOpts {
  std::string corr, soft, out;
  int pmf_iters = 10;
  bool upscale = false;
  Index full_k = 60;
  int irls_iters = 20;
};

int run_refine(const fs::path& xs, const fs::path& ys, const RefineOpts& r, const PrepOpts& prep) {
  if (r.corr.empty() == r.soft.empty()) throw_usage("give exactly one of --corr or --soft-map");
  const ShapeBundle x = bundle_for(xs, prep), y = bundle_for(ys, prep);
  PointMap map;
  if (!r.soft.empty()) {
    const MatrixXf p = load_soft_map(r.soft);
    if (p.rows() != y.size() || p.cols() != x.size()) throw_usage("soft map size does not match the bundles");
    map = extract_map(p);
  } else {
    Index ny = 0;
    map = load_correspondence(r.corr, &ny);
    if (map.size() != x.size() || ny != y.size()) throw_usage("correspondence size does not match the bundles");
  }
  if (r.pmf_iters > 0) {
    PmfConfig cfg;
    cfg.iterations = r.pmf_iters;
    cfg.diameter = y.distances.diameter;
    for (Index j : map.map)
      if (j == kUnmatched) throw_usage("PMF needs every source vertex matched");
    const PmfResult res = pmf_refine(map, x.basis, y.basis, cfg);
    map = res.map;
    if (!res.objective_after.empty())
      spdlog::info("PMF objective at final time {:.6g} -> {:.6g}", res.objective_before.back(), res.objective_after.back());
  }
  Index n_out = y.size();
  if (r.upscale) {
    const TriMesh fx = load_mesh(xs), fy = load_mesh(ys);
    const auto bx = eig_basis(fx, r.full_k), by = eig_basis(fy, r.full_k);
    UpscaleConfig ucfg;
    ucfg.irls_iters = r.irls_iters;
    const UpscaleResult up = upscale(map, x.representatives, y.representatives, bx, by, ucfg);
    map = up.map;
    n_out = fy.num_vertices();
  }
  save_correspondence(map, n_out, r.out);
  std::printf("wrote %s (%lld -> %lld vertices%s)\n", r.out.c_str(), static_cast<long long>(map.size()),
              static_cast<long long>(n_out), map.bijective ? ", bijective" : "");
  return 0;
}

struct EvalOpts {
  std::string corr, gt = "identity", gt_x, gt_y, out, normalization = "diameter";
  std::string x;
};

int run_eval(const fs::path& ys, const EvalOpts& e, const PrepOpts& prep) {
  Index ny = 0;
  const PointMap pred = load_correspondence(e.corr, &ny);
  const ShapeBundle y = bundle_for(ys, prep);
  GeodesicMatrix d;
  double area = 0.0;
  bool low = ny == y.size();
  if (low) {
    d = y.distances;
    area = y.mesh.total_area();
  } else {
    const TriMesh full = load_mesh(ys);
    if (full.num_vertices() != ny) throw_usage("correspondence targets match neither the bundle nor the mesh of " + ys.string());
    d = distance_matrix(full);
    area = full.total_area();
  }
  PointMap gt;
  const bool labels = !e.gt_x.empty() || !e.gt_y.empty();
  if (labels && (e.x.empty() || e.gt_x.empty() || e.gt_y.empty())) throw_usage("--gt-x and --gt-y need --x");
  if (labels && low) {
    ShapeBundle x = bundle_for(e.x, prep), yy = y;
    x.ground_truth = load_ground_truth(e.gt_x, x.original_size());
    yy.ground_truth = load_ground_truth(e.gt_y, yy.original_size());
    gt.map = compose_ground_truth(x, yy);
  } else if (labels) {
    // full resolution: labels compose directly
    const PointMap lx = load_ground_truth(e.gt_x, pred.size()), ly = load_ground_truth(e.gt_y, ny);
    std::unordered_map<Index, Index> label_to_y;
    for (Index j = 0; j < ny; ++j)
      if (const Index l = ly.map[static_cast<std::size_t>(j)]; l != kUnmatched) label_to_y.emplace(l, j);
    gt.map.assign(static_cast<std::size_t>(pred.size()), kUnmatched);
    for (Index i = 0; i < pred.size(); ++i)
      if (auto it = label_to_y.find(lx.map[static_cast<std::size_t>(i)]); it != label_to_y.end())
        gt.map[static_cast<std::size_t>(i)] = it->second;
  } else if (e.gt == "identity") {
    gt.map = identity_permutation(pred.size());
    if (pred.size() > ny) throw_usage("identity ground truth needs n_X <= n_Y");
  } else {
    Index gy = 0;
    gt = load_correspondence(e.gt, &gy);
    if (gt.size() != pred.size() || gy != ny) throw_usage("ground-truth correspondence size differs from the prediction");
  }
  const Normalization norm = parse_normalization(e.normalization);
  const VectorXd errors = geodesic_errors(pred, gt, d, norm, area);
  const ErrorCurve c = curve(errors, default_thresholds());
  std::printf("mean_error %.6g (%s, %lld vertices)\n", c.mean_error, to_string(norm).c_str(), static_cast<long long>(c.count));
  if (!e.out.empty()) {
    save_curve(c, norm, {fs::path(e.corr).filename().string()}, e.out);
    std::printf("wrote %s\n", e.out.c_str());
  }
  return 0;
}

int run_export_colors(const fs::path& xs, const fs::path& ys, const std::string& corr, const std::string& out_x,
                      const std::string& out_y, const PrepOpts& prep) {
  Index ny = 0;
  const PointMap map = load_correspondence(corr, &ny);
  const TriMesh x = mesh_of_size(xs, map.size(), prep), y = mesh_of_size(ys, ny, prep);
  const Eigen::RowVector3d lo = x.vertices.colwise().minCoeff(), hi = x.vertices.colwise().maxCoeff();
  VertexMatrix cx(x.num_vertices(), 3);
  for (Index i = 0; i < x.num_vertices(); ++i)
    cx.row(i) = (x.vertices.row(i) - lo).cwiseQuotient((hi - lo).cwiseMax(1e-12));
  VertexMatrix cy = VertexMatrix::Zero(y.num_vertices(), 3);
  VectorXd hits = VectorXd::Zero(y.num_vertices());
  for (Index i = 0; i < map.size(); ++i) {
    const Index j = map.map[static_cast<std::size_t>(i)];
    if (j == kUnmatched) continue;
    cy.row(j) += cx.row(i);
    hits[j] += 1.0;
  }
  for (Index j = 0; j < y.num_vertices(); ++j) {
    if (hits[j] > 0.0) cy.row(j) /= hits[j];
    else cy.row(j).setConstant(0.5);
  }
  save_mesh_with_colors(x, cx, out_x);
  save_mesh_with_colors(y, cy, out_y);
  std::printf("wrote %s and %s\n", out_x.c_str(), out_y.c_str());
  return 0;
}

struct GenerateOpts {
  std::string out = "data";
  int poses = 4, rings = 60, segments = 25;
  bool shuffle = false;
};

int run_generate(const GenerateOpts& g, const Common& common) {
  if (g.poses < 1) throw_usage("--poses must be at least 1");
  fs::create_directories(g.out);
  std::mt19937_64 rng(common.seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  std::ofstream manifest(fs::path(g.out) / "manifest.txt");
  for (int i = 0; i < g.poses; ++i) {
    shapes::FigurePose pose;
    if (i > 0) pose = {uni(rng), uni(rng), std::numbers::pi * uni(rng), 0.5 * uni(rng)};
    TriMesh m = shapes::tube_figure(g.rings, g.segments, pose);
    const std::string name = "pose_" + std::to_string(i);
    std::ofstream gt(fs::path(g.out) / (name + ".gt"));
    if (g.shuffle) {
      std::vector<Index> perm = identity_permutation(m.num_vertices());
      std::shuffle(perm.begin(), perm.end(), rng);
      m = permute_vertices(m, perm);
      // new vertex r is canonical vertex perm[r]
      for (std::size_t r = 0; r < perm.size(); ++r) gt << r << ' ' << perm[r] << '\n';
    } else {
      gt << "identity " << m.num_vertices() << '\n';
    }
    save_mesh(m, fs::path(g.out) / (name + ".ply"));
    manifest << name << ".ply " << name << ".gt\n";
  }
  std::printf("wrote %d shapes to %s\n", g.poses, g.out.c_str());
  return 0;
}

// Flags override `key=value` lines of --config, which override defaults: the
// file's entries are inserted ahead of the command-line arguments and every
// option keeps its last value.
std::vector<std::string> expand_config(std::vector<std::string> args, const std::vector<std::string>& subcommands) {
  std::string path;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i), args.begin() + static_cast<std::ptrdiff_t>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<std::ptrdiff_t>(i));
      break;
    }
  }
  if (path.empty()) return args;
  std::ifstream in(path);
  if (!in) throw_usage("cannot open config file " + path);
  std::vector<std::string> injected;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw_usage(path + ":" + std::to_string(lineno) + ": expected key=value");
    auto trim = [](std::string s) {
      const auto a = s.find_first_not_of(" \t\r"), b = s.find_last_not_of(" \t\r");
      return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    };
    std::string key = trim(line.substr(0, eq)), value = trim(line.substr(eq + 1));
    std::replace(key.begin(), key.end(), '_', '-');
    injected.push_back("--" + key + "=" + value);
  }
  // after the subcommand name, so subcommand options resolve
  std::size_t insert = args.size();
  for (std::size_t i = 1; i < args.size(); ++i)
    if (std::find(subcommands.begin(), subcommands.end(), args[i]) != subcommands.end()) {
      insert = i + 1;
      break;
    }
  args.insert(args.begin() + static_cast<std::ptrdiff_t>(insert), injected.begin(), injected.end());
  return args;
}

const char* kind_name(ErrorKind k) {
  switch (k) {
    case ErrorKind::usage: return "usage";
    case ErrorKind::data: return "data";
    case ErrorKind::numerical: return "numerical";
  }
  return "unknown";
}

int fail(ErrorKind kind, const std::string& what) {
  std::string line = what;
  std::replace(line.begin(), line.end(), '\n', ' ');
  std::fprintf(stderr, "error[%s]: %s\n", kind_name(kind), line.c_str());
  return static_cast<int>(kind);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Unsupervised deep functional maps with a geodesic distortion loss"};
  app.name("geofm");
  app.require_subcommand(1);
  app.fallthrough();
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  Common common;
  app.add_option("--seed", common.seed, "Seed for all randomness")->capture_default_str();
  app.add_option("--threads", common.threads, "Worker threads (0 = all cores)");
  app.add_option("--precision", common.precision, "Working precision")
      ->check(CLI::IsMember({"float", "double"}))
      ->capture_default_str();
  app.add_flag("-v,--verbose", common.verbose, "Debug logging");
  app.add_flag("-q,--quiet", common.quiet, "Only warnings and errors");
  std::string config_unused;
  app.add_option("--config", config_unused, "key=value file; flags take precedence");

  PrepOpts prep;
  std::string manifest;

  auto* pre = app.add_subcommand("preprocess", "Remesh, eigenbasis, geodesics and SHOT for every manifest shape");
  pre->add_option("manifest", manifest, "Lines 'mesh_path [gt_path]'")->required();
  add_prep_options(pre, prep);

  TrainOpts train;
  auto* tr = app.add_subcommand("train", "Train the descriptor network");
  tr->add_option("manifest", manifest, "Lines 'mesh_path [gt_path]'")->required();
  add_prep_options(tr, prep);
  tr->add_option("--iterations", train.cfg.iterations)->capture_default_str();
  tr->add_option("--batch-pairs", train.cfg.batch_pairs)->capture_default_str();
  tr->add_option("--mode", train.mode)->check(CLI::IsMember({"unsupervised", "supervised"}))->capture_default_str();
  tr->add_option("--ridge", train.cfg.ridge)->capture_default_str();
  tr->add_option("--lr", train.cfg.learning_rate)->capture_default_str();
  tr->add_option("--beta1", train.cfg.beta1)->capture_default_str();
  tr->add_option("--beta2", train.cfg.beta2)->capture_default_str();
  tr->add_option("--epsilon", train.cfg.epsilon)->capture_default_str();
  tr->add_option("--depth", train.cfg.depth, "Residual blocks")->capture_default_str();
  tr->add_option("--clip-norm", train.cfg.clip_norm)->capture_default_str();
  tr->add_option("--checkpoint-every", train.cfg.checkpoint_every)->capture_default_str();
  tr->add_option("--log-supervised", train.cfg.log_supervised, "Monitor the supervised loss when ground truth exists")
      ->capture_default_str();
  std::string ckpt_out = "model.ckpt", log_out = "train_log.csv";
  tr->add_option("--checkpoint", ckpt_out)->capture_default_str();
  tr->add_option("--log", log_out)->capture_default_str();
  tr->add_option("--init", train.init, "Resume from a checkpoint");

  std::string ckpt_in, xs, ys, out = "corr.txt", soft_out;
  auto* inf = app.add_subcommand("infer", "Predict a correspondence with a trained network");
  inf->add_option("--checkpoint", ckpt_in)->required();
  inf->add_option("--x", xs, "Source mesh")->required();
  inf->add_option("--y", ys, "Target mesh")->required();
  inf->add_option("--out", out)->capture_default_str();
  inf->add_option("--soft-map", soft_out, "Also dump P (binary)");
  add_prep_options(inf, prep);

  RefineOpts refine;
  auto* ref = app.add_subcommand("refine", "PMF refinement and optional upscaling");
  ref->add_option("--x", xs)->required();
  ref->add_option("--y", ys)->required();
  ref->add_option("--corr", refine.corr, "Input correspondence");
  ref->add_option("--soft-map", refine.soft, "Input soft map dump");
  ref->add_option("--out", refine.out)->required();
  ref->add_option("--pmf-iters", refine.pmf_iters)->capture_default_str();
  ref->add_flag("--upscale", refine.upscale, "Fit a full-resolution map and extract it");
  ref->add_option("--full-k", refine.full_k, "Eigenfunctions on the original meshes")->capture_default_str();
  ref->add_option("--irls-iters", refine.irls_iters)->capture_default_str();
  add_prep_options(ref, prep);

  EvalOpts ev;
  auto* evc = app.add_subcommand("eval", "Geodesic error of a correspondence");
  evc->add_option("--y", ys, "Target mesh")->required();
  evc->add_option("--corr", ev.corr)->required();
  evc->add_option("--gt", ev.gt, "'identity' or a correspondence file")->capture_default_str();
  evc->add_option("--x", ev.x, "Source mesh (with --gt-x/--gt-y)");
  evc->add_option("--gt-x", ev.gt_x, "Source ground-truth labels");
  evc->add_option("--gt-y", ev.gt_y, "Target ground-truth labels");
  evc->add_option("--normalization", ev.normalization)
      ->check(CLI::IsMember({"diameter", "sqrt_area", "none"}))
      ->capture_default_str();
  evc->add_option("--out", ev.out, "Curve CSV (metadata in <out>.json)");
  add_prep_options(evc, prep);

  std::string out_x = "x_colored.ply", out_y = "y_colored.ply", corr_in;
  auto* exp = app.add_subcommand("export-colors", "Color the source by position and transfer through a correspondence");
  exp->add_option("--x", xs)->required();
  exp->add_option("--y", ys)->required();
  exp->add_option("--corr", corr_in)->required();
  exp->add_option("--out-x", out_x)->capture_default_str();
  exp->add_option("--out-y", out_y)->capture_default_str();
  add_prep_options(exp, prep);

  GenerateOpts gen;
  auto* gn = app.add_subcommand("generate", "Write a synthetic dataset of near-isometric figure poses");
  gn->add_option("--out", gen.out)->capture_default_str();
  gn->add_option("--poses", gen.poses)->capture_default_str();
  gn->add_option("--rings", gen.rings)->capture_default_str();
  gn->add_option("--segments", gen.segments)->capture_default_str();
  gn->add_flag("--shuffle", gen.shuffle, "Shuffle vertex orders and write explicit ground truth");

  try {
    std::vector<std::string> args(argv, argv + argc);
    std::vector<std::string> names;
    for (const auto* sub : app.get_subcommands({})) names.push_back(sub->get_name());
    args = expand_config(std::move(args), names);
    std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
    app.parse(std::move(reversed));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::Error& e) {
    return fail(ErrorKind::usage, e.what());
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  }

  spdlog::set_pattern("[%l] %v");
  spdlog::set_level(common.verbose ? spdlog::level::debug : common.quiet ? spdlog::level::warn : spdlog::level::info);
  if (common.threads > 0) set_default_threads(common.threads);

  try {
    if (*pre) return run_preprocess(manifest, prep);
    if (*tr) {
      train.cfg.checkpoint_path = ckpt_out;
      train.cfg.log_path = log_out;
      return run_train(manifest, prep, train, common);
    }
    if (*inf) return run_infer(ckpt_in, xs, ys, out, soft_out, prep, common);
    if (*ref) return run_refine(xs, ys, refine, prep);
    if (*evc) return run_eval(ys, ev, prep);
    if (*exp) return run_export_colors(xs, ys, corr_in, out_x, out_y, prep);
    if (*gn) return run_generate(gen, common);
  } catch (const Error& e) {
    return fail(e.kind(), e.what());
  } catch (const std::filesystem::filesystem_error& e) {
    return fail(ErrorKind::data, e.what());
  } catch (const std::bad_alloc&) {
    return fail(ErrorKind::numerical, "out of memory");
  } catch (const std::exception& e) {
    return fail(ErrorKind::data, e.what());
  }
  return 0;
}

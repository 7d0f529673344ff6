#include "geofm/mesh.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace geofm {

namespace {

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Returns the next non-empty, non-comment line; false on EOF.
bool next_content_line(std::istream& in, std::string& line) {
  while (std::getline(in, line)) {
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    if (line.find_first_not_of(" \t\r") != std::string::npos) return true;
  }
  return false;
}

struct RawMesh {
  VertexMatrix vertices;
  FaceMatrix faces;
  std::optional<VertexMatrix> colors;
};

void check_face_arity(long count, const std::filesystem::path& path) {
  if (count != 3) throw_data("non-triangle face (" + std::to_string(count) + " vertices) in '" + path.string() + "'");
}

RawMesh read_off(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  if (!next_content_line(in, line)) throw_data("empty file '" + path.string() + "'");
  std::istringstream header(line);
  std::string magic;
  header >> magic;
  const bool colored = magic == "COFF";
  if (magic != "OFF" && !colored) throw_data("missing OFF header in '" + path.string() + "'");
  long nv = -1, nf = -1;
  if (!(header >> nv >> nf)) {
    if (!next_content_line(in, line)) throw_data("missing OFF counts in '" + path.string() + "'");
    std::istringstream counts(line);
    counts >> nv >> nf;
  }
  if (nv < 0 || nf < 0) throw_data("bad OFF counts in '" + path.string() + "'");

  RawMesh raw;
  raw.vertices.resize(nv, 3);
  if (colored) raw.colors = VertexMatrix(nv, 3);
  for (long i = 0; i < nv; ++i) {
    if (!next_content_line(in, line)) throw_data("truncated OFF vertex list in '" + path.string() + "'");
    std::istringstream ls(line);
    if (!(ls >> raw.vertices(i, 0) >> raw.vertices(i, 1) >> raw.vertices(i, 2)))
      throw_data("malformed OFF vertex line " + std::to_string(i) + " in '" + path.string() + "'");
    if (colored) {
      double r = 0, g = 0, b = 0;
      ls >> r >> g >> b;
      const double scale = (r > 1.0 || g > 1.0 || b > 1.0) ? 1.0 / 255.0 : 1.0;
      raw.colors->row(i) << r * scale, g * scale, b * scale;
    }
  }
  raw.faces.resize(nf, 3);
  for (long f = 0; f < nf; ++f) {
    if (!next_content_line(in, line)) throw_data("truncated OFF face list in '" + path.string() + "'");
    std::istringstream ls(line);
    long count = 0;
    ls >> count;
    check_face_arity(count, path);
    if (!(ls >> raw.faces(f, 0) >> raw.faces(f, 1) >> raw.faces(f, 2)))
      throw_data("malformed OFF face line " + std::to_string(f) + " in '" + path.string() + "'");
  }
  return raw;
}

enum class PlyType { i8, u8, i16, u16, i32, u32, f32, f64 };

PlyType parse_ply_type(const std::string& name, const std::filesystem::path& path) {
  static const std::pair<const char*, PlyType> table[] = {
      {"char", PlyType::i8},   {"int8", PlyType::i8},     {"uchar", PlyType::u8},  {"uint8", PlyType::u8},
      {"short", PlyType::i16}, {"int16", PlyType::i16},   {"ushort", PlyType::u16}, {"uint16", PlyType::u16},
      {"int", PlyType::i32},   {"int32", PlyType::i32},   {"uint", PlyType::u32},  {"uint32", PlyType::u32},
      {"float", PlyType::f32}, {"float32", PlyType::f32}, {"double", PlyType::f64}, {"float64", PlyType::f64}};
  for (const auto& [n, t] : table)
    if (name == n) return t;
  throw_data("unknown PLY type '" + name + "' in '" + path.string() + "'");
}

std::size_t ply_size(PlyType t) {
  switch (t) {
    case PlyType::i8:
    case PlyType::u8: return 1;
    case PlyType::i16:
    case PlyType::u16: return 2;
    case PlyType::i32:
    case PlyType::u32:
    case PlyType::f32: return 4;
    case PlyType::f64: return 8;
  }
  return 0;
}

struct PlyProperty {
  std::string name;
  PlyType type = PlyType::f32;
  bool is_list = false;
  PlyType count_type = PlyType::u8;
};

struct PlyElement {
  std::string name;
  long count = 0;
  std::vector<PlyProperty> properties;
};

class PlyValueSource {
 public:
  PlyValueSource(std::istream& in, bool binary, std::filesystem::path path)
      : in_(in), binary_(binary), path_(std::move(path)) {}

  double read(PlyType t) {
    if (!binary_) {
      double v;
      if (!(in_ >> v)) throw_data("truncated PLY body in '" + path_.string() + "'");
      return v;
    }
    unsigned char buf[8];
    in_.read(reinterpret_cast<char*>(buf), static_cast<std::streamsize>(ply_size(t)));
    if (!in_) throw_data("truncated PLY body in '" + path_.string() + "'");
    switch (t) {
      case PlyType::i8: return static_cast<double>(static_cast<std::int8_t>(buf[0]));
      case PlyType::u8: return static_cast<double>(buf[0]);
      case PlyType::i16: return decode<std::int16_t>(buf);
      case PlyType::u16: return decode<std::uint16_t>(buf);
      case PlyType::i32: return decode<std::int32_t>(buf);
      case PlyType::u32: return decode<std::uint32_t>(buf);
      case PlyType::f32: return decode<float>(buf);
      case PlyType::f64: return decode<double>(buf);
    }
    return 0.0;
  }

 private:
  template <typename T>
  static double decode(const unsigned char* buf) {
    T v;
    std::memcpy(&v, buf, sizeof v);
    return static_cast<double>(v);
  }

  std::istream& in_;
  bool binary_;
  std::filesystem::path path_;
};

RawMesh read_ply(std::istream& in, const std::filesystem::path& path) {
  std::string line;
  std::getline(in, line);  // "ply"
  bool binary = false;
  std::vector<PlyElement> elements;
  while (true) {
    if (!std::getline(in, line)) throw_data("unterminated PLY header in '" + path.string() + "'");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt == "binary_little_endian") binary = true;
      else if (fmt != "ascii") throw_data("unsupported PLY format '" + fmt + "' in '" + path.string() + "'");
    } else if (key == "element") {
      PlyElement e;
      ls >> e.name >> e.count;
      elements.push_back(e);
    } else if (key == "property") {
      if (elements.empty()) throw_data("PLY property before element in '" + path.string() + "'");
      PlyProperty p;
      std::string type;
      ls >> type;
      if (type == "list") {
        std::string count_type, item_type;
        ls >> count_type >> item_type >> p.name;
        p.is_list = true;
        p.count_type = parse_ply_type(count_type, path);
        p.type = parse_ply_type(item_type, path);
      } else {
        p.type = parse_ply_type(type, path);
        ls >> p.name;
      }
      elements.back().properties.push_back(p);
    } else if (key == "end_header") {
      break;
    }
  }

  RawMesh raw;
  PlyValueSource src(in, binary, path);
  bool have_faces = false;
  for (const auto& e : elements) {
    if (e.name == "vertex") {
      raw.vertices.resize(e.count, 3);
      int channels_found = 0;
      for (const auto& p : e.properties)
        if (p.name == "red" || p.name == "green" || p.name == "blue") ++channels_found;
      if (channels_found == 3) raw.colors = VertexMatrix(e.count, 3);
      for (long i = 0; i < e.count; ++i) {
        for (const auto& p : e.properties) {
          if (p.is_list) {
            const auto n = static_cast<long>(src.read(p.count_type));
            for (long k = 0; k < n; ++k) src.read(p.type);
            continue;
          }
          const double v = src.read(p.type);
          const double color_scale = (p.type == PlyType::f32 || p.type == PlyType::f64) ? 1.0 : 1.0 / 255.0;
          if (p.name == "x") raw.vertices(i, 0) = v;
          else if (p.name == "y") raw.vertices(i, 1) = v;
          else if (p.name == "z") raw.vertices(i, 2) = v;
          else if (raw.colors && p.name == "red") (*raw.colors)(i, 0) = v * color_scale;
          else if (raw.colors && p.name == "green") (*raw.colors)(i, 1) = v * color_scale;
          else if (raw.colors && p.name == "blue") (*raw.colors)(i, 2) = v * color_scale;
        }
      }
    } else if (e.name == "face") {
      have_faces = true;
      raw.faces.resize(e.count, 3);
      for (long f = 0; f < e.count; ++f) {
        for (const auto& p : e.properties) {
          if (!p.is_list) {
            src.read(p.type);
            continue;
          }
          const auto n = static_cast<long>(src.read(p.count_type));
          if (p.name == "vertex_indices" || p.name == "vertex_index") {
            check_face_arity(n, path);
            for (int k = 0; k < 3; ++k) raw.faces(f, k) = static_cast<int>(src.read(p.type));
          } else {
            for (long k = 0; k < n; ++k) src.read(p.type);
          }
        }
      }
    } else {
      for (long i = 0; i < e.count; ++i)
        for (const auto& p : e.properties) {
          const long n = p.is_list ? static_cast<long>(src.read(p.count_type)) : 1;
          for (long k = 0; k < n; ++k) src.read(p.type);
        }
    }
  }
  if (!have_faces) raw.faces.resize(0, 3);
  return raw;
}

std::string format_double(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

MeshFile read_mesh_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw_data("cannot open mesh '" + path.string() + "'");
  std::string first;
  {
    const auto pos = in.tellg();
    std::getline(in, first);
    in.seekg(pos);
  }
  first = lower(first.substr(0, first.find_first_of(" \t\r\n")));
  RawMesh raw;
  if (first == "ply") raw = read_ply(in, path);
  else if (first == "off" || first == "coff") raw = read_off(in, path);
  else throw_data("unrecognized mesh format in '" + path.string() + "'");

  if (raw.vertices.rows() == 0 || raw.faces.rows() == 0) throw_data("empty mesh in '" + path.string() + "'");
  std::vector<Index> kept;
  MeshFile out;
  out.mesh = make_mesh(std::move(raw.vertices), std::move(raw.faces), &kept);
  if (raw.colors) {
    VertexMatrix colors(static_cast<Index>(kept.size()), 3);
    for (std::size_t i = 0; i < kept.size(); ++i) colors.row(static_cast<Index>(i)) = raw.colors->row(kept[i]);
    out.colors = std::move(colors);
  }
  return out;
}

TriMesh load_mesh(const std::filesystem::path& path) { return read_mesh_file(path).mesh; }

namespace {

void write_ply(const TriMesh& mesh, const VertexMatrix* colors, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot open '" + path.string() + "' for writing");
  out << "ply\nformat ascii 1.0\nelement vertex " << mesh.num_vertices() << "\n"
      << "property double x\nproperty double y\nproperty double z\n";
  if (colors) out << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  out << "element face " << mesh.num_faces() << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (Index i = 0; i < mesh.num_vertices(); ++i) {
    out << format_double(mesh.vertices(i, 0)) << ' ' << format_double(mesh.vertices(i, 1)) << ' '
        << format_double(mesh.vertices(i, 2));
    if (colors) {
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp((*colors)(i, c), 0.0, 1.0);
        out << ' ' << static_cast<int>(std::lround(v * 255.0));
      }
    }
    out << '\n';
  }
  for (Index f = 0; f < mesh.num_faces(); ++f)
    out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2) << '\n';
  if (!out) throw_data("write failed on '" + path.string() + "'");
}

}  // namespace

void save_mesh(const TriMesh& mesh, const std::filesystem::path& path) {
  if (lower(path.extension().string()) != ".off") {
    write_ply(mesh, nullptr, path);
    return;
  }
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw_data("cannot open '" + path.string() + "' for writing");
  out << "OFF\n" << mesh.num_vertices() << ' ' << mesh.num_faces() << " 0\n";
  for (Index i = 0; i < mesh.num_vertices(); ++i)
    out << format_double(mesh.vertices(i, 0)) << ' ' << format_double(mesh.vertices(i, 1)) << ' '
        << format_double(mesh.vertices(i, 2)) << '\n';
  for (Index f = 0; f < mesh.num_faces(); ++f)
    out << "3 " << mesh.faces(f, 0) << ' ' << mesh.faces(f, 1) << ' ' << mesh.faces(f, 2) << '\n';
  if (!out) throw_data("write failed on '" + path.string() + "'");
}

void save_mesh_with_colors(const TriMesh& mesh, const Eigen::Ref<const VertexMatrix>& colors,
                           const std::filesystem::path& path) {
  if (colors.rows() != mesh.num_vertices())
    throw_usage("color count " + std::to_string(colors.rows()) + " does not match vertex count " +
                std::to_string(mesh.num_vertices()));
  const VertexMatrix c = colors;
  write_ply(mesh, &c, path);
}

}  // namespace geofm

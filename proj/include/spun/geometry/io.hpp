#pragma once

#include <spun/geometry/mesh.hpp>

#include <cctype>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <optional>
#include <regex>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace spun {

enum class ShapeFormat { OFF, PLY };

using Shape = std::variant<TriMesh, PointCloud>;

namespace detail {

// Whitespace tokenizer that skips '#' comments and tracks line numbers for errors.
class Tokens {
 public:
  explicit Tokens(std::string_view text) : text_(text) {}

  std::optional<std::string_view> next() {
    skip();
    if (pos_ >= text_.size()) return std::nullopt;
    std::size_t start = pos_;
    while (pos_ < text_.size() && !std::isspace(static_cast<unsigned char>(text_[pos_])) && text_[pos_] != '#') ++pos_;
    return text_.substr(start, pos_ - start);
  }
  std::string_view expect(const char* what) {
    auto t = next();
    if (!t) throw Error(ErrorCode::ParseError, std::string("unexpected end of input, expected ") + what);
    return *t;
  }
  double number(const char* what) {
    auto t = expect(what);
    double v = 0.0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_) + ": bad " + what + " '" + std::string(t) + "'");
    return v;
  }
  Index integer(const char* what) {
    auto t = expect(what);
    Index v = 0;
    auto [p, ec] = std::from_chars(t.data(), t.data() + t.size(), v);
    if (ec != std::errc() || p != t.data() + t.size())
      throw Error(ErrorCode::ParseError, "line " + std::to_string(line_) + ": bad " + what + " '" + std::string(t) + "'");
    return v;
  }
  // Rest of the current line, used by the PLY header.
  std::string_view line() {
    while (pos_ < text_.size() && (text_[pos_] == ' ' || text_[pos_] == '\t' || text_[pos_] == '\r')) ++pos_;
    std::size_t start = pos_;
    while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
    auto out = text_.substr(start, pos_ - start);
    if (pos_ < text_.size()) {
      ++pos_;
      ++line_;
    }
    while (!out.empty() && (out.back() == '\r' || out.back() == ' ')) out.remove_suffix(1);
    return out;
  }
  bool done() {
    skip();
    return pos_ >= text_.size();
  }
  std::size_t line_number() const { return line_; }

 private:
  void skip() {
    while (pos_ < text_.size()) {
      char c = text_[pos_];
      if (c == '\n') {
        ++line_;
        ++pos_;
      } else if (std::isspace(static_cast<unsigned char>(c))) {
        ++pos_;
      } else if (c == '#') {
        while (pos_ < text_.size() && text_[pos_] != '\n') ++pos_;
      } else {
        break;
      }
    }
  }
  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t line_ = 1;
};

inline void read_polygon(Tokens& tok, Index nv, std::vector<Face>& faces) {
  Index n = tok.integer("polygon size");
  if (n < 3) throw Error(ErrorCode::ParseError, "line " + std::to_string(tok.line_number()) + ": polygon with fewer than 3 vertices");
  std::vector<Index> poly(static_cast<std::size_t>(n));
  for (auto& v : poly) {
    v = tok.integer("vertex index");
    if (v < 0 || v >= nv)
      throw Error(ErrorCode::ParseError, "line " + std::to_string(tok.line_number()) + ": vertex index " + std::to_string(v) + " out of range");
  }
  // fan triangulation of polygons
  for (std::size_t j = 1; j + 1 < poly.size(); ++j) faces.push_back({poly[0], poly[j], poly[j + 1]});
}

inline Shape finish_shape(std::vector<Vec3> verts, std::vector<Face> faces) {
  if (verts.empty()) throw Error(ErrorCode::EmptyShape, "shape has no vertices");
  for (const auto& v : verts)
    if (!v.allFinite()) throw Error(ErrorCode::ParseError, "non-finite coordinate");
  if (faces.empty()) {
    PointCloud pc;
    pc.points = std::move(verts);
    pc.boundary_flags.assign(pc.points.size(), false);
    return pc;
  }
  TriMesh m;
  m.vertices = std::move(verts);
  m.faces = std::move(faces);
  validate(m);
  return m;
}

inline Shape parse_off(std::string_view text) {
  Tokens tok(text);
  auto magic = tok.expect("OFF header");
  if (magic != "OFF") throw Error(ErrorCode::ParseError, "missing OFF header");
  Index nv = tok.integer("vertex count");
  Index nf = tok.integer("face count");
  tok.integer("edge count");
  if (nv < 0 || nf < 0) throw Error(ErrorCode::ParseError, "negative element count");
  std::vector<Vec3> verts(static_cast<std::size_t>(nv));
  for (auto& v : verts) {
    double x = tok.number("x"), y = tok.number("y"), z = tok.number("z");
    v = Vec3(x, y, z);
  }
  std::vector<Face> faces;
  for (Index f = 0; f < nf; ++f) read_polygon(tok, nv, faces);
  if (!tok.done()) throw Error(ErrorCode::ParseError, "trailing data after declared elements (count mismatch)");
  return finish_shape(std::move(verts), std::move(faces));
}

inline Shape parse_ply(std::string_view text) {
  Tokens tok(text);
  if (tok.line() != "ply") throw Error(ErrorCode::ParseError, "missing ply magic");
  Index nv = -1, nf = 0;
  std::vector<std::string> vprops;
  std::string current;
  bool ascii = false;
  for (;;) {
    if (tok.done()) throw Error(ErrorCode::ParseError, "unterminated PLY header");
    std::string l(tok.line());
    std::istringstream ls(l);
    std::string kw;
    ls >> kw;
    if (kw == "end_header") break;
    if (kw == "format") {
      std::string f;
      ls >> f;
      ascii = f == "ascii";
    } else if (kw == "element") {
      Index n = -1;
      ls >> current >> n;
      if (n < 0) throw Error(ErrorCode::ParseError, "bad element count in '" + l + "'");
      if (current == "vertex") nv = n;
      else if (current == "face") nf = n;
      else if (n != 0) throw Error(ErrorCode::ParseError, "unsupported element '" + current + "'");
    } else if (kw == "property" && current == "vertex") {
      std::string type, name;
      ls >> type >> name;
      vprops.push_back(name);
    }
  }
  if (!ascii) throw Error(ErrorCode::ParseError, "only ASCII PLY is supported");
  if (nv < 0) throw Error(ErrorCode::ParseError, "PLY header without vertex element");
  auto find = [&](const char* n) {
    auto it = std::find(vprops.begin(), vprops.end(), n);
    if (it == vprops.end()) throw Error(ErrorCode::ParseError, std::string("PLY vertex property '") + n + "' missing");
    return static_cast<std::size_t>(it - vprops.begin());
  };
  const std::size_t ix = find("x"), iy = find("y"), iz = find("z");
  std::vector<Vec3> verts(static_cast<std::size_t>(nv));
  std::vector<double> row(vprops.size());
  for (auto& v : verts) {
    for (auto& r : row) r = tok.number("vertex property");
    v = Vec3(row[ix], row[iy], row[iz]);
  }
  std::vector<Face> faces;
  for (Index f = 0; f < nf; ++f) read_polygon(tok, nv, faces);
  if (!tok.done()) throw Error(ErrorCode::ParseError, "trailing data after declared elements (count mismatch)");
  return finish_shape(std::move(verts), std::move(faces));
}

}  // namespace detail

inline Shape load_shape(std::string_view bytes, std::optional<ShapeFormat> format = std::nullopt) {
  if (!format) {
    std::size_t i = 0;
    while (i < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[i]))) ++i;
    if (bytes.substr(i, 3) == "ply") format = ShapeFormat::PLY;
    else if (bytes.substr(i, 3) == "OFF") format = ShapeFormat::OFF;
    else throw Error(ErrorCode::ParseError, "cannot determine shape format from magic line");
  }
  return *format == ShapeFormat::OFF ? detail::parse_off(bytes) : detail::parse_ply(bytes);
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw Error(ErrorCode::IoError, "write failed for " + path.string());
}

inline Shape load_shape_file(const std::filesystem::path& path) {
  auto ext = path.extension().string();
  std::optional<ShapeFormat> fmt;
  if (ext == ".off" || ext == ".OFF") fmt = ShapeFormat::OFF;
  if (ext == ".ply" || ext == ".PLY") fmt = ShapeFormat::PLY;
  return load_shape(read_file(path), fmt);
}

inline TriMesh load_mesh_file(const std::filesystem::path& path) {
  auto s = load_shape_file(path);
  if (auto* m = std::get_if<TriMesh>(&s)) return std::move(*m);
  throw Error(ErrorCode::ParseError, path.string() + " has no faces");
}

namespace detail {
inline void put_vec(std::ostream& os, const Vec3& v) { os << v.x() << ' ' << v.y() << ' ' << v.z(); }
}  // namespace detail

// Positions are written with 17 significant digits so a reload is bit-exact.
inline std::string to_off(const TriMesh& mesh, std::string_view comment = {}) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "OFF\n";
  if (!comment.empty()) {
    std::istringstream cs{std::string(comment)};
    std::string line;
    while (std::getline(cs, line)) os << "# " << line << '\n';
  }
  os << mesh.vertices.size() << ' ' << mesh.faces.size() << " 0\n";
  for (const auto& v : mesh.vertices) {
    detail::put_vec(os, v);
    os << '\n';
  }
  for (const auto& f : mesh.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  return os.str();
}

inline std::string to_off(const PointCloud& pc) {
  std::ostringstream os;
  os << std::setprecision(17) << "OFF\n" << pc.points.size() << " 0 0\n";
  for (const auto& v : pc.points) {
    detail::put_vec(os, v);
    os << '\n';
  }
  return os.str();
}

inline std::string to_ply(const TriMesh& mesh) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "ply\nformat ascii 1.0\nelement vertex " << mesh.vertices.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nelement face " << mesh.faces.size()
     << "\nproperty list uchar int vertex_indices\nend_header\n";
  for (const auto& v : mesh.vertices) {
    detail::put_vec(os, v);
    os << '\n';
  }
  for (const auto& f : mesh.faces) os << "3 " << f[0] << ' ' << f[1] << ' ' << f[2] << '\n';
  return os.str();
}

inline std::string to_ply(const PointCloud& pc) {
  std::ostringstream os;
  os << std::setprecision(17);
  os << "ply\nformat ascii 1.0\nelement vertex " << pc.points.size()
     << "\nproperty double x\nproperty double y\nproperty double z\nend_header\n";
  for (const auto& v : pc.points) {
    detail::put_vec(os, v);
    os << '\n';
  }
  return os.str();
}

// OFF with one scalar per vertex carried in a comment block ("# scalars v0 v1 ...").
inline std::string to_colored_off(const TriMesh& mesh, const std::vector<double>& scalars) {
  std::ostringstream cs;
  cs << std::setprecision(17) << "scalars";
  for (double s : scalars) cs << ' ' << s;
  return to_off(mesh, cs.str());
}

}  // namespace spun

#pragma once

// Binary field records (.fld), snapshot index files and legacy VTK export.
//
// .fld layout, little-endian:
//   char[8]  "TUMFLD01"
//   uint32   nx, ny, ncomp
//   uint32   length of each component (ncomp entries)
//   float64  time
//   float64  values, component after component

#include "tumopt/grid_fem.hpp"

#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

namespace tumopt {

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct FieldRecord {
  std::uint32_t nx = 0;
  std::uint32_t ny = 0;
  double time = 0.0;
  std::vector<std::string> names;  // not stored in the file
  std::vector<Vector> components;
};

namespace detail {
inline constexpr char kFieldMagic[8] = {'T', 'U', 'M', 'F', 'L', 'D', '0', '1'};

template <class T>
T to_little(T v) {
  if constexpr (std::endian::native == std::endian::little) {
    return v;
  } else {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &v, sizeof(T));
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(b[i], b[sizeof(T) - 1 - i]);
    std::memcpy(&v, b, sizeof(T));
    return v;
  }
}

template <class T>
void put(std::ostream& os, T v) {
  v = to_little(v);
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& path) {
  T v;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw IoError("truncated field file " + path);
  return to_little(v);
}
}  // namespace detail

inline void write_field_record(const std::string& path, const FieldRecord& rec) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.write(detail::kFieldMagic, 8);
  detail::put<std::uint32_t>(os, rec.nx);
  detail::put<std::uint32_t>(os, rec.ny);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(rec.components.size()));
  for (const auto& c : rec.components) detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(c.size()));
  detail::put<double>(os, rec.time);
  for (const auto& c : rec.components)
    for (Eigen::Index i = 0; i < c.size(); ++i) detail::put<double>(os, c[i]);
  if (!os) throw IoError("write failed for " + path);
}

inline FieldRecord read_field_record(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open field file " + path);
  char magic[8];
  if (!is.read(magic, 8) || std::memcmp(magic, detail::kFieldMagic, 8) != 0)
    throw IoError("not a field file: " + path);
  FieldRecord rec;
  rec.nx = detail::get<std::uint32_t>(is, path);
  rec.ny = detail::get<std::uint32_t>(is, path);
  const auto ncomp = detail::get<std::uint32_t>(is, path);
  if (ncomp > 64) throw IoError("corrupt component count in " + path);
  std::vector<std::uint32_t> len(ncomp);
  for (auto& l : len) l = detail::get<std::uint32_t>(is, path);
  rec.time = detail::get<double>(is, path);
  for (auto l : len) {
    Vector c(l);
    for (std::uint32_t i = 0; i < l; ++i) c[i] = detail::get<double>(is, path);
    rec.components.push_back(std::move(c));
  }
  return rec;
}

/// Scalar field record for one grid-shaped field.
inline FieldRecord scalar_record(const Grid& g, const Vector& f, double time = 0.0) {
  FieldRecord rec;
  rec.nx = static_cast<std::uint32_t>(g.nx);
  rec.ny = static_cast<std::uint32_t>(g.ny);
  rec.time = time;
  rec.components.push_back(f);
  return rec;
}

inline void check_record_shape(const FieldRecord& rec, const Grid& g, const std::string& what) {
  if (rec.nx != static_cast<std::uint32_t>(g.nx) || rec.ny != static_cast<std::uint32_t>(g.ny)) {
    std::ostringstream msg;
    msg << what << ": record grid " << rec.nx << "x" << rec.ny << " does not match " << g.nx << "x" << g.ny;
    throw ConfigError(msg.str());
  }
}

// ---------------------------------------------------------------------------

struct IndexEntry {
  int step = 0;
  double time = 0.0;
  std::string file;
};

inline void write_index(const std::string& path, const std::vector<IndexEntry>& entries) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os << "# step time file\n";
  char buf[64];
  for (const auto& e : entries) {
    std::snprintf(buf, sizeof buf, "%.17g", e.time);
    os << e.step << ' ' << buf << ' ' << e.file << '\n';
  }
}

inline std::vector<IndexEntry> read_index(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open index " + path);
  std::vector<IndexEntry> out;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    IndexEntry e;
    if (!(ls >> e.step >> e.time >> e.file)) throw IoError("malformed index line in " + path + ": " + line);
    out.push_back(e);
  }
  return out;
}

// ---------------------------------------------------------------------------

struct VtkField {
  std::string name;
  const Vector* values;
  int components;  // 1 for scalars, 2 for interleaved vectors
};

/// Legacy ASCII STRUCTURED_POINTS file with point data.
inline void write_vtk(const std::string& path, const Grid& g, const std::vector<VtkField>& fields,
                      const std::string& title = "tumopt field") {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot open " + path + " for writing");
  os.precision(17);
  os << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET STRUCTURED_POINTS\n";
  os << "DIMENSIONS " << g.nx + 1 << ' ' << g.ny + 1 << " 1\n";
  os << "ORIGIN 0 0 0\nSPACING " << g.hx << ' ' << g.hy << " 1\n";
  os << "POINT_DATA " << g.node_count() << '\n';
  for (const auto& f : fields) {
    if (f.components == 1) {
      os << "SCALARS " << f.name << " double 1\nLOOKUP_TABLE default\n";
      for (int n = 0; n < g.node_count(); ++n) os << (*f.values)[n] << '\n';
    } else {
      os << "VECTORS " << f.name << " double\n";
      for (int n = 0; n < g.node_count(); ++n)
        os << (*f.values)[2 * n] << ' ' << (*f.values)[2 * n + 1] << " 0\n";
    }
  }
  if (!os) throw IoError("write failed for " + path);
}

}  // namespace tumopt

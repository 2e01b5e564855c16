// io.hpp
// CSV export/import of particle swarms and cell fields, plus SHA-256 file
// digests for run manifests. Reals are written with 17 significant digits so
// every double round-trips exactly.

#pragma once

#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "geotransport/common.hpp"
#include "geotransport/gqs.hpp"
#include "geotransport/transport.hpp"

namespace geotransport::io {

inline std::string format_real(double v) {
  char buf[32];
  const int n = std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf, static_cast<std::size_t>(n));
}

inline std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  return out;
}

inline std::ifstream open_input(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  return in;
}

inline void finish(std::ostream& out, const std::string& what) {
  out.flush();
  if (!out) throw IoError("write failed for " + what);
}

// Header-checked row reader. Columns are located by name; extra columns
// are ignored.
class CsvReader {
 public:
  CsvReader(std::istream& in, std::string source, const std::vector<std::string>& required)
      : in_(in), source_(std::move(source)) {
    std::string header;
    if (!std::getline(in_, header)) fail("empty file, expected a header line");
    line_ = 1;
    strip_cr(header);
    const auto names = split(header);
    for (const auto& name : required) {
      std::size_t pos = names.size();
      for (std::size_t c = 0; c < names.size(); ++c) {
        if (names[c] == name) pos = c;
      }
      if (pos == names.size()) fail("missing column '" + name + "' in header '" + header + "'");
      columns_.push_back(pos);
    }
    width_ = names.size();
  }

  // Fills `values` with the required columns of the next row; false at EOF.
  bool next(std::vector<double>& values) {
    std::string row;
    while (std::getline(in_, row)) {
      ++line_;
      strip_cr(row);
      if (row.empty()) continue;
      const auto cells = split(row);
      if (cells.size() != width_) {
        fail("expected " + std::to_string(width_) + " fields, found " + std::to_string(cells.size()));
      }
      values.resize(columns_.size());
      for (std::size_t c = 0; c < columns_.size(); ++c) values[c] = parse(cells[columns_[c]]);
      return true;
    }
    return false;
  }

  std::size_t line() const { return line_; }

  [[noreturn]] void fail(const std::string& message) const {
    throw ParseError(source_ + ":" + std::to_string(line_ == 0 ? 1 : line_) + ": " + message);
  }

 private:
  static void strip_cr(std::string& s) {
    if (!s.empty() && s.back() == '\r') s.pop_back();
  }

  static std::vector<std::string> split(const std::string& s) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ss(s);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    if (!s.empty() && s.back() == ',') out.emplace_back();
    return out;
  }

  double parse(const std::string& cell) const {
    double v = 0.0;
    const char* first = cell.data();
    const char* last = cell.data() + cell.size();
    const auto [ptr, ec] = std::from_chars(first, last, v);
    if (ec != std::errc() || ptr != last || cell.empty()) fail("not a number: '" + cell + "'");
    return v;
  }

  std::istream& in_;
  std::string source_;
  std::vector<std::size_t> columns_;
  std::size_t width_ = 0;
  std::size_t line_ = 0;
};

// particles.csv: t,alpha,x,p,phi. Undefined particles are written at their
// placeholder coordinates (0, 0).
class ParticleWriter {
 public:
  explicit ParticleWriter(std::ostream& out) : out_(out) { out_ << "t,alpha,x,p,phi\n"; }

  void write(const GeometricQuantumState& gqs) {
    const std::string t = format_real(gqs.time);
    for (std::size_t a = 0; a < gqs.size(); ++a) {
      const Particle& q = gqs.particles[a];
      out_ << t << ',' << a << ',' << format_real(q.x) << ',' << format_real(q.gamma.p) << ','
           << format_real(q.gamma.phi) << '\n';
    }
  }

 private:
  std::ostream& out_;
};

// Inverse of ParticleWriter. Rows of one snapshot must be contiguous with
// alpha = 0, 1, ...; particles below the weight floor are marked undefined.
inline std::vector<GeometricQuantumState> read_particles(std::istream& in, const std::string& source) {
  CsvReader reader(in, source, {"t", "alpha", "x", "p", "phi"});
  std::vector<GeometricQuantumState> out;
  std::vector<double> v;
  while (reader.next(v)) {
    const double t = v[0];
    const double alpha = v[1];
    if (out.empty() || t != out.back().time) {
      if (!out.empty() && out.back().size() != out.front().size()) {
        reader.fail("snapshot t = " + format_real(out.back().time) + " has " +
                    std::to_string(out.back().size()) + " particles, expected " +
                    std::to_string(out.front().size()));
      }
      if (!out.empty() && !(t > out.back().time)) reader.fail("time is not increasing");
      out.emplace_back();
      out.back().time = t;
    }
    GeometricQuantumState& g = out.back();
    if (alpha != static_cast<double>(g.size())) {
      reader.fail("expected alpha = " + std::to_string(g.size()) + ", found " + format_real(alpha));
    }
    if (!(v[2] >= 0.0) || !(v[3] >= 0.0 && v[3] <= 1.0) || !std::isfinite(v[4])) {
      reader.fail("particle outside the Bloch square");
    }
    const BlochPoint z{v[3], v[4]};
    g.particles.push_back({v[2], z, embed(z), v[2] > kWeightFloor});
  }
  if (out.empty()) reader.fail("no particle rows");
  if (out.back().size() != out.front().size()) reader.fail("last snapshot is incomplete");
  return out;
}

// Cell-field file: t,i,k,value, one row per cell per snapshot.
inline void write_cells(std::ostream& out, const std::vector<CellField>& fields,
                        const std::vector<double>& times) {
  if (fields.size() != times.size()) throw ValidationError("cell series and times differ in length");
  out << "t,i,k,value\n";
  for (std::size_t n = 0; n < fields.size(); ++n) {
    const std::string t = format_real(times[n]);
    for (Eigen::Index i = 0; i < fields[n].rows(); ++i) {
      for (Eigen::Index k = 0; k < fields[n].cols(); ++k) {
        out << t << ',' << i << ',' << k << ',' << format_real(fields[n](i, k)) << '\n';
      }
    }
  }
}

// Cell-summed flux vector: t,i,k,j_p,j_phi.
inline void write_flux_vectors(std::ostream& out, const CoarseFields& f, const std::vector<double>& times) {
  out << "t,i,k,j_p,j_phi\n";
  for (std::size_t n = 0; n < f.flux_p.size(); ++n) {
    const std::string t = format_real(times[n]);
    for (Eigen::Index i = 0; i < f.flux_p[n].rows(); ++i) {
      for (Eigen::Index k = 0; k < f.flux_p[n].cols(); ++k) {
        out << t << ',' << i << ',' << k << ',' << format_real(f.flux_p[n](i, k)) << ','
            << format_real(f.flux_phi[n](i, k)) << '\n';
      }
    }
  }
}

struct CellSeries {
  std::vector<double> times;
  std::vector<CellField> fields;
};

// Rows for each snapshot must be contiguous; grid size comes from the
// largest (i, k) of the first snapshot.
inline CellSeries read_cells(std::istream& in, const std::string& source) {
  CsvReader reader(in, source, {"t", "i", "k", "value"});
  std::vector<std::vector<std::array<double, 3>>> rows;
  CellSeries out;
  std::vector<double> v;
  while (reader.next(v)) {
    if (out.times.empty() || v[0] != out.times.back()) {
      if (!out.times.empty() && !(v[0] > out.times.back())) reader.fail("time is not increasing");
      out.times.push_back(v[0]);
      rows.emplace_back();
    }
    if (v[1] < 0 || v[2] < 0 || v[1] != std::floor(v[1]) || v[2] != std::floor(v[2])) {
      reader.fail("cell indices must be non-negative integers");
    }
    rows.back().push_back({v[1], v[2], v[3]});
  }
  if (rows.empty()) reader.fail("no cell rows");
  int n_p = 0;
  int n_phi = 0;
  for (const auto& r : rows.front()) {
    n_p = std::max(n_p, static_cast<int>(r[0]) + 1);
    n_phi = std::max(n_phi, static_cast<int>(r[1]) + 1);
  }
  for (std::size_t n = 0; n < rows.size(); ++n) {
    if (rows[n].size() != static_cast<std::size_t>(n_p) * static_cast<std::size_t>(n_phi)) {
      throw ParseError(source + ": snapshot t = " + format_real(out.times[n]) + " has " +
                       std::to_string(rows[n].size()) + " cells, expected " +
                       std::to_string(n_p * n_phi));
    }
    CellField field = CellField::Constant(n_p, n_phi, std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : rows[n]) {
      const int i = static_cast<int>(r[0]);
      const int k = static_cast<int>(r[1]);
      if (i >= n_p || k >= n_phi || !std::isnan(field(i, k))) {
        throw ParseError(source + ": snapshot t = " + format_real(out.times[n]) +
                         " has a duplicate or out-of-range cell (" + std::to_string(i) + ", " +
                         std::to_string(k) + ")");
      }
      field(i, k) = r[2];
    }
    out.fields.push_back(std::move(field));
  }
  return out;
}

inline void write_series(std::ostream& out, const std::string& column, const std::vector<double>& times,
                         const std::vector<double>& values) {
  if (times.size() != values.size()) throw ValidationError("series and times differ in length");
  out << "t," << column << '\n';
  for (std::size_t n = 0; n < values.size(); ++n) {
    out << format_real(times[n]) << ',' << format_real(values[n]) << '\n';
  }
}

// Uniform step recovered from a time column; rejects irregular spacing.
inline double uniform_step(const std::vector<double>& times, const std::string& source) {
  if (times.size() < 2) throw ValidationError(source + ": need at least two snapshots");
  const double dt = (times.back() - times.front()) / static_cast<double>(times.size() - 1);
  for (std::size_t n = 1; n < times.size(); ++n) {
    if (std::abs(times[n] - times[n - 1] - dt) > 1e-9 * std::max(1.0, std::abs(dt))) {
      throw ValidationError(source + ": snapshot times are not uniformly spaced");
    }
  }
  return dt;
}

inline std::string sha256_file(const std::filesystem::path& path) {
  std::ifstream in = open_input(path);
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (ctx == nullptr || EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) != 1) {
    EVP_MD_CTX_free(ctx);
    throw IoError("cannot initialise SHA-256");
  }
  std::vector<char> buf(1 << 16);
  while (in) {
    in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() > 0) EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  static constexpr char hex[] = "0123456789abcdef";
  std::string out;
  for (unsigned int n = 0; n < len; ++n) {
    out += hex[digest[n] >> 4];
    out += hex[digest[n] & 15];
  }
  return out;
}

}  // namespace geotransport::io

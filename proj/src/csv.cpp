#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

#include "hdapprox/experiment.hpp"

namespace hdapprox {

namespace {

constexpr const char* kHeader =
    "n,p,replicate,method,log_approx,log_oracle,oracle_se,rel_error,runtime_ms,error";

// Missing values are written as empty fields.
std::string format_double(double v) {
  if (std::isnan(v)) return "";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

// Splits one logical record; quoted fields may contain newlines, so the
// stream is read until the record is closed.
bool read_record(std::istream& in, std::vector<std::string>& fields) {
  fields.clear();
  std::string field;
  bool in_quotes = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (in_quotes) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          in_quotes = false;
        }
      } else {
        field += c;
      }
    } else if (c == '"') {
      in_quotes = true;
    } else if (c == ',') {
      fields.push_back(std::move(field));
      field.clear();
    } else if (c == '\n') {
      break;
    } else if (c != '\r') {
      field += c;
    }
  }
  if (!any) return false;
  fields.push_back(std::move(field));
  return true;
}

double parse_double(const std::string& s) {
  if (s.empty()) return std::nan("");
  if (s == "inf") return std::numeric_limits<double>::infinity();
  if (s == "-inf") return -std::numeric_limits<double>::infinity();
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end != s.c_str() + s.size()) throw std::runtime_error("bad number in CSV: " + s);
  return v;
}

std::size_t parse_size(const std::string& s) {
  char* end = nullptr;
  const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
  if (s.empty() || end != s.c_str() + s.size()) {
    throw std::runtime_error("bad integer in CSV: " + s);
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

double relative_error(double log_approx, double log_oracle) {
  return std::abs(std::expm1(log_approx - log_oracle));
}

void write_csv(const std::vector<CellRecord>& cells, std::ostream& out) {
  out << kHeader << '\n';
  for (const auto& c : cells) {
    out << c.n << ',' << c.p << ',' << c.replicate << ',' << quote(c.method) << ','
        << format_double(c.log_approx) << ',' << format_double(c.log_oracle) << ','
        << format_double(c.oracle_se) << ',' << format_double(c.rel_error) << ','
        << format_double(c.runtime_ms) << ',' << quote(c.error) << '\n';
  }
}

void emit_csv(const ScalingRun& run, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot open " + path + " for writing: " + std::strerror(errno));
  }
  write_csv(run.cells, out);
  out.flush();
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

std::vector<CellRecord> read_csv(std::istream& in) {
  std::vector<std::string> fields;
  if (!read_record(in, fields)) throw std::runtime_error("CSV is empty");
  std::string header;
  for (std::size_t i = 0; i < fields.size(); ++i) header += (i ? "," : "") + fields[i];
  if (header != kHeader) throw std::runtime_error("unexpected CSV header: " + header);

  std::vector<CellRecord> cells;
  while (read_record(in, fields)) {
    if (fields.size() == 1 && fields[0].empty()) continue;
    if (fields.size() != 10) {
      throw std::runtime_error("CSV row has " + std::to_string(fields.size()) + " fields");
    }
    CellRecord c;
    c.n = parse_size(fields[0]);
    c.p = parse_size(fields[1]);
    c.replicate = parse_size(fields[2]);
    c.method = fields[3];
    c.log_approx = parse_double(fields[4]);
    c.log_oracle = parse_double(fields[5]);
    c.oracle_se = parse_double(fields[6]);
    c.rel_error = parse_double(fields[7]);
    c.runtime_ms = parse_double(fields[8]);
    c.error = fields[9];
    cells.push_back(std::move(c));
  }
  return cells;
}

std::vector<CellRecord> read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path + ": " + std::strerror(errno));
  return read_csv(in);
}

}  // namespace hdapprox

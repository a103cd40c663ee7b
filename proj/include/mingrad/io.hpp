#pragma once

#include <array>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include "json.hpp"

#include "mingrad/errors.hpp"
#include "mingrad/numerics.hpp"
#include "mingrad/problems.hpp"

#ifndef MINGRAD_VERSION
#define MINGRAD_VERSION "0.1.0"
#endif

namespace mingrad {

inline constexpr const char* kVersion = MINGRAD_VERSION;

// Shortest round-trip decimal form, independent of the C locale.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

// A CSV document with a header row, quoted per RFC 4180.
class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> header) : header_(std::move(header)) {}

  void add_row(std::vector<std::string> row) {
    if (row.size() != header_.size()) throw InvalidArgument("CsvTable: row width does not match header");
    rows_.push_back(std::move(row));
  }

  const std::vector<std::string>& header() const { return header_; }
  const std::vector<std::vector<std::string>>& rows() const { return rows_; }

  static std::string quote(std::string_view field) {
    if (field.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char ch : field) {
      if (ch == '"') out += '"';
      out += ch;
    }
    out += '"';
    return out;
  }

  std::string str() const {
    std::string out;
    auto emit = [&out](const std::vector<std::string>& r) {
      for (std::size_t i = 0; i < r.size(); ++i) {
        if (i) out += ',';
        out += quote(r[i]);
      }
      out += "\r\n";
    };
    emit(header_);
    for (const auto& r : rows_) emit(r);
    return out;
  }

 private:
  std::vector<std::string> header_;
  std::vector<std::vector<std::string>> rows_;
};

// Writes to a sibling temporary file and renames it into place.
inline void write_file_atomic(const std::filesystem::path& path, std::string_view content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw InvalidArgument("cannot open " + tmp.string() + " for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw InvalidArgument("failed writing " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// Hash of `content` as git computes it for a blob: SHA-1 of
// "blob <size>\0<content>", in hex.
inline std::string git_blob_hash(std::string_view content) {
  const std::string head = "blob " + std::to_string(content.size()) + '\0';
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) throw NumericalError("git_blob_hash: cannot allocate digest context");
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  const bool ok = EVP_DigestInit_ex(ctx, EVP_sha1(), nullptr) == 1 &&
                  EVP_DigestUpdate(ctx, head.data(), head.size()) == 1 &&
                  EVP_DigestUpdate(ctx, content.data(), content.size()) == 1 &&
                  EVP_DigestFinal_ex(ctx, md.data(), &len) == 1;
  EVP_MD_CTX_free(ctx);
  if (!ok) throw NumericalError("git_blob_hash: digest failed");
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
  return hex.str();
}

namespace detail {

inline void append_doubles(std::string& out, const double* data, std::size_t count) {
  for (std::size_t i = 0; i < count; ++i) {
    out += format_double(data[i]);
    out += '\n';
  }
}

}  // namespace detail

// Content hash of an instance: its JSON description followed by every data
// entry in shortest decimal form.
inline std::string instance_hash(const ProblemInstance& p) {
  std::string content = to_json(p).dump() + '\n';
  const Matrix& data = p.kind() == ProblemKind::EntropicOT ? p.C() : p.D();
  const Matrix rowmajor = data.transpose();
  detail::append_doubles(content, rowmajor.data(), static_cast<std::size_t>(rowmajor.size()));
  if (p.kind() == ProblemKind::EntropicOT) {
    detail::append_doubles(content, p.b_hist().data(), static_cast<std::size_t>(p.b_hist().size()));
  }
  return git_blob_hash(content);
}

inline std::string utc_timestamp(std::chrono::system_clock::time_point tp = std::chrono::system_clock::now()) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(tp);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  std::ostringstream os;
  os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return os.str();
}

struct RunManifest {
  std::string experiment;
  std::vector<std::string> command_line;
  nlohmann::json config = nlohmann::json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> outputs;
  std::string instance_hash;
  std::string started;
  std::string finished;
  double duration_s = 0.0;
  nlohmann::json results = nlohmann::json::object();

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["experiment"] = experiment;
    j["command_line"] = command_line;
    j["config"] = config;
    j["seed"] = seed;
    j["code_version"] = kVersion;
    j["outputs"] = outputs;
    if (!instance_hash.empty()) j["instance_hash"] = instance_hash;
    j["started"] = started;
    j["finished"] = finished;
    j["duration_s"] = duration_s;
    j["results"] = results;
    return j;
  }
};

// Replaces non-finite numbers, which JSON cannot carry, by null.
inline nlohmann::json json_number(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline nlohmann::json json_vector(const Vector& v) {
  nlohmann::json a = nlohmann::json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(json_number(v(i)));
  return a;
}

}  // namespace mingrad

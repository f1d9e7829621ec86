//
// Project MolText - Copyright 2026 MolText Developers.
// SPDX-License-Identifier: Apache-2.0
//

#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moltext/error.hpp"

namespace moltext {

using Json = nlohmann::json;

struct IoError: Error {
  using Error::Error;
};

inline std::string read_file(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open file: " + path.string());
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

inline std::vector<std::string> read_lines(const std::filesystem::path &path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw IoError("cannot open file: " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r')
      line.pop_back();
    lines.push_back(line);
  }
  return lines;
}

inline std::vector<Json> read_jsonl(const std::filesystem::path &path) {
  std::vector<Json> records;
  for (const std::string &line: read_lines(path)) {
    if (line.empty())
      continue;
    Json rec = Json::parse(line, nullptr, false);
    if (rec.is_discarded())
      throw IoError("malformed record in " + path.string() + ": " + line);
    records.push_back(std::move(rec));
  }
  return records;
}

/// Writes via a temporary file and rename so readers never observe a
/// half-written artifact.
inline void write_file_atomic(const std::filesystem::path &path,
                              const std::string &content) {
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out)
      throw IoError("cannot open file for writing: " + tmp.string());
    out.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!out)
      throw IoError("short write: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline void write_jsonl_atomic(const std::filesystem::path &path,
                               const std::vector<Json> &records) {
  std::ostringstream out;
  for (const Json &rec: records)
    out << rec.dump() << '\n';
  write_file_atomic(path, out.str());
}

}  // namespace moltext

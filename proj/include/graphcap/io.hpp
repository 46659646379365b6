// Copyright 2026 The Graphcap Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "graphcap/array.hpp"

namespace graphcap {

// Feature matrix file layout, byte-exact:
//   bytes 0..3   magic "FMAT"
//   bytes 4..7   format version, little-endian uint32, currently 1
//   bytes 8..11  rows, little-endian uint32, nonzero
//   bytes 12..15 cols, little-endian uint32, nonzero
//   bytes 16..   rows*cols IEEE-754 binary32 values, little-endian, row-major
inline constexpr std::uint32_t kFeatureMatrixVersion = 1;

namespace detail {

inline void store_u32_le(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

inline std::uint32_t load_u32_le(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) |
         (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::string read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in)
    throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)),
                    std::istreambuf_iterator<char>());
  return bytes;
}

inline void write_file_bytes(const std::filesystem::path& path,
                             const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out)
    throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out)
    throw std::runtime_error("short write to " + path.string());
}

}  // namespace detail

template <typename S>
void write_feature_matrix(const std::filesystem::path& path,
                          const Array<S>& m) {
  if (m.rank() != 2)
    throw std::invalid_argument("feature matrix must be 2-D, got " +
                                shape_str(m.shape()));
  m.require_finite(("feature matrix for " + path.string()).c_str());
  if (m.rows() > 0xffffffffull || m.cols() > 0xffffffffull)
    throw std::invalid_argument("feature matrix extent exceeds format limit");
  std::string bytes;
  bytes.reserve(16 + 4 * m.numel());
  bytes.append("FMAT", 4);
  detail::store_u32_le(bytes, kFeatureMatrixVersion);
  detail::store_u32_le(bytes, static_cast<std::uint32_t>(m.rows()));
  detail::store_u32_le(bytes, static_cast<std::uint32_t>(m.cols()));
  for (std::size_t i = 0; i < m.numel(); ++i)
    detail::store_u32_le(
        bytes, std::bit_cast<std::uint32_t>(static_cast<float>(m[i])));
  detail::write_file_bytes(path, bytes);
}

inline Array<float> read_feature_matrix(const std::filesystem::path& path) {
  const std::string bytes = detail::read_file_bytes(path);
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16)
    throw std::runtime_error(path.string() + ": truncated header");
  if (bytes.compare(0, 4, "FMAT") != 0)
    throw std::runtime_error(path.string() + ": bad magic");
  const std::uint32_t version = detail::load_u32_le(p + 4);
  if (version != kFeatureMatrixVersion)
    throw std::runtime_error(path.string() + ": unsupported version " +
                             std::to_string(version));
  const std::uint64_t rows = detail::load_u32_le(p + 8);
  const std::uint64_t cols = detail::load_u32_le(p + 12);
  if (rows == 0 || cols == 0)
    throw std::runtime_error(path.string() + ": zero extent");
  const std::uint64_t expected = 16 + 4 * rows * cols;
  if (bytes.size() < expected)
    throw std::runtime_error(path.string() + ": truncated payload");
  if (bytes.size() > expected)
    throw std::runtime_error(path.string() + ": trailing data");
  Array<float> m(static_cast<std::size_t>(rows), static_cast<std::size_t>(cols));
  for (std::size_t i = 0; i < m.numel(); ++i)
    m[i] = std::bit_cast<float>(detail::load_u32_le(p + 16 + 4 * i));
  return m;
}

// Token index space. Indices 0..3 are reserved sentinels; caption words
// follow in insertion order.
class Vocabulary {
 public:
  static constexpr std::int32_t kPad = 0;
  static constexpr std::int32_t kSos = 1;
  static constexpr std::int32_t kEos = 2;
  static constexpr std::int32_t kUnk = 3;

  Vocabulary() {
    for (const char* t : {"<pad>", "<sos>", "<eos>", "<unk>"}) add_token(t);
  }

  std::int32_t add_token(const std::string& token) {
    if (token.empty())
      throw std::invalid_argument("vocabulary: empty token");
    for (char ch : token)
      if (ch == ' ' || ch == '\t' || ch == '\n' || ch == '\r')
        throw std::invalid_argument("vocabulary: token contains whitespace: " +
                                    token);
    auto it = index_.find(token);
    if (it != index_.end()) return it->second;
    const auto id = static_cast<std::int32_t>(tokens_.size());
    index_[token] = id;
    tokens_.push_back(token);
    return id;
  }

  std::int32_t id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  const std::string& token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size())
      throw std::out_of_range("vocabulary: index " + std::to_string(id) +
                              " out of range");
    return tokens_[static_cast<std::size_t>(id)];
  }

  std::size_t size() const { return tokens_.size(); }

  // [<sos>, word indices with <unk> fallback, <eos>].
  std::vector<std::int32_t> encode(const std::vector<std::string>& words) const {
    std::vector<std::int32_t> out;
    out.reserve(words.size() + 2);
    out.push_back(kSos);
    for (const auto& w : words) out.push_back(id(w));
    out.push_back(kEos);
    return out;
  }

  // Inverse of encode up to <unk>; sentinel indices are dropped.
  std::vector<std::string> decode(const std::vector<std::int32_t>& ids) const {
    std::vector<std::string> out;
    for (std::int32_t t : ids) {
      if (t == kPad || t == kSos || t == kEos) continue;
      out.push_back(token(t));
    }
    return out;
  }

  void save(const std::filesystem::path& path) const {
    std::string bytes;
    for (const auto& t : tokens_) {
      bytes += t;
      bytes += '\n';
    }
    detail::write_file_bytes(path, bytes);
  }

  static Vocabulary load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    Vocabulary v;
    std::string line;
    std::size_t row = 0;
    while (std::getline(in, line)) {
      if (row < v.size()) {
        if (line != v.tokens_[row])
          throw std::runtime_error(path.string() +
                                   ": reserved token mismatch at index " +
                                   std::to_string(row));
      } else {
        v.add_token(line);
      }
      ++row;
    }
    if (row < 4)
      throw std::runtime_error(path.string() + ": missing reserved tokens");
    return v;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::int32_t> index_;
};

// One audio clip: mel input plus one or more reference captions as word
// sequences (token indices are a per-vocabulary view, produced on demand).
struct Clip {
  std::string id;
  Array<float> mel;
  std::vector<std::vector<std::string>> references;
};

struct Dataset {
  std::vector<Clip> clips;
};

// Caption file: one reference per line, "id<TAB>space-separated words";
// several lines may share an id.
inline void write_caption_tsv(const std::filesystem::path& path,
                              const Dataset& dataset) {
  std::string bytes;
  for (const auto& clip : dataset.clips)
    for (const auto& ref : clip.references) {
      bytes += clip.id;
      bytes += '\t';
      for (std::size_t i = 0; i < ref.size(); ++i) {
        if (i) bytes += ' ';
        bytes += ref[i];
      }
      bytes += '\n';
    }
  detail::write_file_bytes(path, bytes);
}

struct CaptionLine {
  std::string id;
  std::vector<std::string> words;
};

inline std::vector<CaptionLine> read_caption_tsv(
    const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::vector<CaptionLine> lines;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos || tab == 0)
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": expected id<TAB>caption");
    CaptionLine rec;
    rec.id = line.substr(0, tab);
    std::size_t pos = tab + 1;
    while (pos < line.size()) {
      const auto space = line.find(' ', pos);
      const auto end = space == std::string::npos ? line.size() : space;
      if (end > pos) rec.words.push_back(line.substr(pos, end - pos));
      pos = end + 1;
    }
    if (rec.words.empty())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) +
                               ": empty caption");
    lines.push_back(std::move(rec));
  }
  return lines;
}

// Dataset directory layout: features/<id>.fmat plus captions.tsv.
inline void save_dataset(const std::filesystem::path& dir,
                         const Dataset& dataset) {
  std::filesystem::create_directories(dir / "features");
  for (const auto& clip : dataset.clips)
    write_feature_matrix(dir / "features" / (clip.id + ".fmat"), clip.mel);
  write_caption_tsv(dir / "captions.tsv", dataset);
}

inline Dataset load_dataset(const std::filesystem::path& dir) {
  const auto lines = read_caption_tsv(dir / "captions.tsv");
  Dataset out;
  std::unordered_map<std::string, std::size_t> by_id;
  for (const auto& rec : lines) {
    auto it = by_id.find(rec.id);
    if (it == by_id.end()) {
      by_id[rec.id] = out.clips.size();
      Clip clip;
      clip.id = rec.id;
      clip.mel = read_feature_matrix(dir / "features" / (rec.id + ".fmat"));
      clip.references.push_back(rec.words);
      out.clips.push_back(std::move(clip));
    } else {
      out.clips[it->second].references.push_back(rec.words);
    }
  }
  if (out.clips.empty())
    throw std::runtime_error(dir.string() + ": dataset has no clips");
  return out;
}

// Sorted unique caption words after the reserved sentinels, so the mapping
// is independent of clip order.
inline Vocabulary build_vocabulary(const Dataset& dataset) {
  std::map<std::string, bool> words;
  for (const auto& clip : dataset.clips)
    for (const auto& ref : clip.references)
      for (const auto& w : ref) words[w] = true;
  Vocabulary v;
  for (const auto& [w, unused] : words) v.add_token(w);
  return v;
}

// Flat key=value configuration text. Blank lines and '#' comments are
// skipped; keys keep their first occurrence order on write, and duplicate
// keys on read are an error.
using KeyValues = std::vector<std::pair<std::string, std::string>>;

inline KeyValues read_kv_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  KeyValues out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos || eq == first)
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": expected key=value");
    std::string key = line.substr(first, eq - first);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t'))
      key.pop_back();
    std::string value = line.substr(eq + 1);
    while (!value.empty() &&
           (value.back() == '\r' || value.back() == ' ' || value.back() == '\t'))
      value.pop_back();
    const auto vstart = value.find_first_not_of(" \t");
    value = vstart == std::string::npos ? "" : value.substr(vstart);
    for (const auto& [k, unused] : out)
      if (k == key)
        throw std::runtime_error(path.string() + ": duplicate key " + key);
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

inline void write_kv_file(const std::filesystem::path& path,
                          const KeyValues& kv) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path.string());
  for (const auto& [key, value] : kv) out << key << "=" << value << "\n";
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace graphcap

// Copyright 2026 The earn-engine Authors
// SPDX-License-Identifier: Apache-2.0

#include "earn/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <vector>

#include "earn/error.hpp"

namespace earn {

namespace {

constexpr char kMagic[4] = {'E', 'A', 'R', 'N'};

template <class U>
void put_le(std::string& out, U v) {
  for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

template <class U>
U get_le(const std::string& in, std::size_t at) {
  U v = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) {
    v |= static_cast<U>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  }
  return v;
}

struct Entry {
  std::string name;
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::uint64_t offset = 0;
  std::size_t line = 0;
};

}  // namespace

std::string encode_checkpoint(const Weights<float>& weights) {
  std::ostringstream header;
  std::uint64_t offset = 0;
  weights.for_each([&](const std::string& name, const Matrix& m) {
    header << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << offset << '\n';
    offset += m.size() * sizeof(float);
  });
  const std::string text = header.str();

  std::string out(kMagic, sizeof(kMagic));
  put_le<std::uint32_t>(out, kCheckpointVersion);
  put_le<std::uint64_t>(out, text.size());
  out += text;
  out.reserve(out.size() + offset);
  weights.for_each([&](const std::string&, const Matrix& m) {
    for (float x : m.data()) put_le<std::uint32_t>(out, std::bit_cast<std::uint32_t>(x));
  });
  return out;
}

Weights<float> decode_checkpoint(const std::string& bytes) {
  constexpr std::size_t kFixed = sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t);
  if (bytes.size() < kFixed || std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) {
    throw ParseError(0, "checkpoint: missing EARN magic");
  }
  const auto version = get_le<std::uint32_t>(bytes, 4);
  if (version != kCheckpointVersion) {
    throw ParseError(0, "checkpoint: unsupported format version " + std::to_string(version));
  }
  const auto header_len = get_le<std::uint64_t>(bytes, 8);
  if (header_len > bytes.size() - kFixed) throw ParseError(0, "checkpoint: header runs past end of file");
  const std::size_t payload_at = kFixed + header_len;
  const std::uint64_t payload_len = bytes.size() - payload_at;

  std::vector<Entry> entries;
  std::istringstream header(bytes.substr(kFixed, header_len));
  std::string line;
  std::size_t number = 0;
  while (std::getline(header, line)) {
    ++number;
    if (line.empty()) continue;
    std::istringstream ls(line);
    Entry e;
    e.line = number;
    std::string extra;
    if (!(ls >> e.name >> e.rows >> e.cols >> e.offset) || (ls >> extra)) {
      throw ParseError(number, "checkpoint header: expected 'name rows cols offset'");
    }
    entries.push_back(e);
  }

  // Offsets must be in bounds and must not overlap.
  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(), [](const Entry* a, const Entry* b) { return a->offset < b->offset; });
  std::uint64_t end = 0;
  for (const Entry* e : by_offset) {
    const std::uint64_t len = static_cast<std::uint64_t>(e->rows) * e->cols * sizeof(float);
    if (e->offset < end) throw ParseError(e->line, "checkpoint header: tensor '" + e->name + "' overlaps another");
    if (e->offset > payload_len || len > payload_len - e->offset) {
      throw ParseError(e->line, "checkpoint header: tensor '" + e->name + "' out of bounds");
    }
    end = e->offset + len;
  }

  std::map<std::string, Matrix> tensors;
  int n_layers = 0;
  for (const auto& e : entries) {
    Matrix m(e.rows, e.cols);
    const std::size_t at = payload_at + e.offset;
    for (std::size_t i = 0; i < m.size(); ++i) {
      m.data()[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, at + i * sizeof(float)));
    }
    if (!tensors.emplace(e.name, std::move(m)).second) {
      throw ParseError(e.line, "checkpoint header: tensor '" + e.name + "' listed twice");
    }
    if (e.name.starts_with("layers.")) {
      const auto dot = e.name.find('.', 7);
      try {
        n_layers = std::max(n_layers, std::stoi(e.name.substr(7, dot - 7)) + 1);
      } catch (const std::exception&) {
        throw ParseError(e.line, "checkpoint header: bad layer index in '" + e.name + "'");
      }
    }
  }

  Weights<float> w;
  w.layers.resize(static_cast<std::size_t>(n_layers));
  std::size_t used = 0;
  w.for_each([&](const std::string& name, Matrix& m) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw ParseError(0, "checkpoint: missing tensor '" + name + "'");
    m = std::move(it->second);
    ++used;
  });
  if (used != tensors.size()) throw ParseError(0, "checkpoint: unexpected extra tensors");
  return w;
}

void save_checkpoint(const std::filesystem::path& path, const Weights<float>& weights) {
  const std::string bytes = encode_checkpoint(weights);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

Weights<float> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace earn

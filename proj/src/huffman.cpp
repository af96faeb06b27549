// SPDX-License-Identifier: Apache-2.0

#include "subnetcl/huffman.hpp"

#include <algorithm>
#include <queue>
#include <string>

#include "subnetcl/errors.hpp"

namespace subnetcl::huffman {

namespace {

class BitWriter {
 public:
  void put(std::uint64_t code, int len) {
    for (int i = len - 1; i >= 0; --i) put_bit((code >> i) & 1u);
  }
  void put_bit(std::uint64_t b) {
    if (nbits_ % 8 == 0) bytes_.push_back(0);
    if (b) bytes_.back() |= static_cast<std::uint8_t>(0x80u >> (nbits_ % 8));
    ++nbits_;
  }
  std::vector<std::uint8_t> take_bytes() { return std::move(bytes_); }
  std::uint64_t bit_count() const { return nbits_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t nbits_ = 0;
};

class BitReader {
 public:
  BitReader(const std::vector<std::uint8_t>& bytes, std::uint64_t nbits)
      : bytes_(bytes), nbits_(nbits) {}
  bool done() const { return pos_ >= nbits_; }
  std::uint64_t position() const { return pos_; }
  int next() {
    if (pos_ >= nbits_) return -1;
    const std::uint8_t byte = bytes_[pos_ / 8];
    const int bit = (byte >> (7 - pos_ % 8)) & 1;
    ++pos_;
    return bit;
  }

 private:
  const std::vector<std::uint8_t>& bytes_;
  std::uint64_t nbits_;
  std::uint64_t pos_ = 0;
};

// Huffman code lengths from symbol frequencies. Ties resolve by node creation
// order so the lengths (and thus checkpoints) are identical across runs.
std::array<std::uint8_t, 256> code_lengths_from_freqs(
    const std::array<std::uint64_t, 256>& freq) {
  struct Node {
    std::uint64_t weight;
    int id;
    int left = -1, right = -1;
    int symbol = -1;
  };
  std::vector<Node> nodes;
  auto cmp = [&](int a, int b) {
    if (nodes[a].weight != nodes[b].weight)
      return nodes[a].weight > nodes[b].weight;
    return nodes[a].id > nodes[b].id;
  };
  std::priority_queue<int, std::vector<int>, decltype(cmp)> heap(cmp);
  for (int s = 0; s < 256; ++s) {
    if (freq[s] == 0) continue;
    nodes.push_back({freq[s], static_cast<int>(nodes.size()), -1, -1, s});
    heap.push(static_cast<int>(nodes.size()) - 1);
  }
  std::array<std::uint8_t, 256> lengths{};
  if (nodes.empty()) return lengths;
  if (nodes.size() == 1) {
    lengths[static_cast<std::size_t>(nodes[0].symbol)] = 1;
    return lengths;
  }
  while (heap.size() > 1) {
    const int a = heap.top();
    heap.pop();
    const int b = heap.top();
    heap.pop();
    nodes.push_back({nodes[a].weight + nodes[b].weight,
                     static_cast<int>(nodes.size()), a, b, -1});
    heap.push(static_cast<int>(nodes.size()) - 1);
  }
  // depth-first walk to assign lengths
  std::vector<std::pair<int, int>> stack{{heap.top(), 0}};
  while (!stack.empty()) {
    auto [idx, depth] = stack.back();
    stack.pop_back();
    const Node& n = nodes[static_cast<std::size_t>(idx)];
    if (n.symbol >= 0) {
      lengths[static_cast<std::size_t>(n.symbol)] =
          static_cast<std::uint8_t>(depth);
    } else {
      stack.emplace_back(n.left, depth + 1);
      stack.emplace_back(n.right, depth + 1);
    }
  }
  return lengths;
}

struct CanonicalTable {
  // Codes ordered by (length, symbol); per-length first code and first index.
  std::array<std::uint64_t, 256> code{};
  std::array<std::uint8_t, 256> len{};
  int max_len = 0;
  std::array<std::uint64_t, 65> first_code{};
  std::array<int, 65> first_index{};
  std::array<int, 65> count{};
  std::vector<int> ordered_symbols;
};

CanonicalTable build_canonical(const std::array<std::uint8_t, 256>& lengths) {
  CanonicalTable t;
  t.len = lengths;
  for (int s = 0; s < 256; ++s)
    if (lengths[s] > 0) t.max_len = std::max<int>(t.max_len, lengths[s]);
  for (int l = 1; l <= t.max_len; ++l)
    for (int s = 0; s < 256; ++s)
      if (lengths[s] == l) t.ordered_symbols.push_back(s);
  std::uint64_t next_code = 0;
  int prev_len = 0;
  int index = 0;
  for (int s : t.ordered_symbols) {
    const int l = lengths[s];
    next_code <<= (l - prev_len);
    if (t.count[l] == 0) {
      t.first_code[l] = next_code;
      t.first_index[l] = index;
    }
    t.code[static_cast<std::size_t>(s)] = next_code;
    ++next_code;
    ++t.count[l];
    prev_len = l;
    ++index;
  }
  return t;
}

}  // namespace

std::uint64_t Encoded::dictionary_bits() const {
  std::uint64_t n = 0;
  for (int s = 0; s < 256; ++s)
    if (code_lengths[s] > 0) ++n;
  return 16 * n;
}

Encoded encode(const std::vector<std::uint8_t>& data) {
  std::array<std::uint64_t, 256> freq{};
  for (std::uint8_t b : data) ++freq[b];
  Encoded enc;
  enc.code_lengths = code_lengths_from_freqs(freq);
  enc.symbol_count = data.size();
  const CanonicalTable table = build_canonical(enc.code_lengths);
  BitWriter writer;
  for (std::uint8_t b : data) writer.put(table.code[b], table.len[b]);
  enc.payload_bits = writer.bit_count();
  enc.payload = writer.take_bytes();
  return enc;
}

std::vector<std::uint8_t> decode(const Encoded& enc) {
  const CanonicalTable table = build_canonical(enc.code_lengths);
  std::vector<std::uint8_t> out;
  out.reserve(enc.symbol_count);
  BitReader reader(enc.payload, enc.payload_bits);
  while (out.size() < enc.symbol_count) {
    const std::uint64_t start = reader.position();
    std::uint64_t code = 0;
    int len = 0;
    bool matched = false;
    while (len < table.max_len) {
      const int bit = reader.next();
      if (bit < 0)
        throw DecodeError("huffman: payload truncated at bit offset " +
                          std::to_string(start));
      code = (code << 1) | static_cast<std::uint64_t>(bit);
      ++len;
      if (table.count[len] > 0 && code >= table.first_code[len] &&
          code < table.first_code[len] + static_cast<std::uint64_t>(table.count[len])) {
        const int idx =
            table.first_index[len] + static_cast<int>(code - table.first_code[len]);
        out.push_back(static_cast<std::uint8_t>(
            table.ordered_symbols[static_cast<std::size_t>(idx)]));
        matched = true;
        break;
      }
    }
    if (!matched)
      throw DecodeError("huffman: no code matches at bit offset " +
                        std::to_string(start));
  }
  return out;
}

PackedMask pack_mask(const MaskLayers& mask) {
  PackedMask packed;
  std::uint64_t nbits = 0;
  for (const auto& m : mask) {
    packed.shapes.emplace_back(static_cast<std::uint32_t>(m.rows()),
                               static_cast<std::uint32_t>(m.cols()));
    nbits += static_cast<std::uint64_t>(m.size());
  }
  packed.bytes.assign((nbits + 7) / 8, 0);
  packed.pad_bits = static_cast<std::uint32_t>(packed.bytes.size() * 8 - nbits);
  std::uint64_t pos = 0;
  for (const auto& m : mask)
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c, ++pos)
        if (m(r, c)) packed.bytes[pos / 8] |= static_cast<std::uint8_t>(0x80u >> (pos % 8));
  return packed;
}

MaskLayers unpack_mask(const PackedMask& packed) {
  MaskLayers mask;
  std::uint64_t pos = 0;
  const std::uint64_t nbits = packed.bytes.size() * 8 - packed.pad_bits;
  for (auto [rows, cols] : packed.shapes) {
    MaskMat m(rows, cols);
    for (std::uint32_t r = 0; r < rows; ++r)
      for (std::uint32_t c = 0; c < cols; ++c, ++pos) {
        if (pos >= nbits)
          throw DecodeError("mask: bitstring shorter than shape header implies");
        m(r, c) = (packed.bytes[pos / 8] >> (7 - pos % 8)) & 1;
      }
    mask.push_back(std::move(m));
  }
  return mask;
}

EncodedMask encode_mask(const MaskLayers& mask) {
  EncodedMask out;
  PackedMask packed = pack_mask(mask);
  out.code = encode(packed.bytes);
  packed.bytes.clear();
  out.packed_meta = std::move(packed);
  return out;
}

MaskLayers decode_mask(const EncodedMask& enc) {
  PackedMask packed = enc.packed_meta;
  packed.bytes = decode(enc.code);
  return unpack_mask(packed);
}

}  // namespace subnetcl::huffman

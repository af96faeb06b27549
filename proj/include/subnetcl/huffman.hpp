// SPDX-License-Identifier: Apache-2.0
//
// Canonical Huffman codec over fixed 8-bit symbols, used to compress task
// masks. The bitstream layout is pinned (MSB-first within bytes) so encoded
// payloads are bit-exact across platforms.

#pragma once

#include <array>
#include <cstdint>
#include <utility>
#include <vector>

#include "subnetcl/types.hpp"

namespace subnetcl::huffman {

struct Encoded {
  // Canonical code lengths; length 0 means the symbol does not occur.
  std::array<std::uint8_t, 256> code_lengths{};
  std::vector<std::uint8_t> payload;  // MSB-first bitstream
  std::uint64_t payload_bits = 0;
  std::uint64_t symbol_count = 0;

  // Dictionary cost in bits: 16 bits per occurring symbol
  // (u8 symbol + u8 length), matching the checkpoint layout.
  std::uint64_t dictionary_bits() const;
  std::uint64_t total_bits() const { return payload_bits + dictionary_bits(); }
};

Encoded encode(const std::vector<std::uint8_t>& data);

// Inverse of encode; throws DecodeError with the offending bit offset on a
// truncated or corrupt payload.
std::vector<std::uint8_t> decode(const Encoded& enc);

// Packs mask layers into a flat bitstring (layers in order, row-major within
// each layer, MSB-first within bytes), zero-padded to a byte boundary.
struct PackedMask {
  std::vector<std::uint8_t> bytes;
  std::uint32_t pad_bits = 0;  // zero bits appended before packing
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes;
};

PackedMask pack_mask(const MaskLayers& mask);
MaskLayers unpack_mask(const PackedMask& packed);

// Convenience roundtrip used by capacity accounting and checkpoints.
struct EncodedMask {
  PackedMask packed_meta;  // shapes + pad; bytes field unused after encode
  Encoded code;
};

EncodedMask encode_mask(const MaskLayers& mask);
MaskLayers decode_mask(const EncodedMask& enc);

}  // namespace subnetcl::huffman

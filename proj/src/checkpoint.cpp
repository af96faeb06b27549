// SPDX-License-Identifier: Apache-2.0

#include "subnetcl/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "subnetcl/errors.hpp"
#include "subnetcl/huffman.hpp"

namespace subnetcl::checkpoint {

namespace {

constexpr char kMagic[8] = {'S', 'N', 'C', 'L', 'C', 'K', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void bytes(const std::uint8_t* data, std::size_t n) {
    buf_.append(reinterpret_cast<const char*>(data), n);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buf_.append(s);
  }
  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  explicit Reader(std::string data) : data_(std::move(data)) {}
  std::uint8_t u8() {
    need(1);
    return static_cast<std::uint8_t>(data_[pos_++]);
  }
  std::uint16_t u16() {
    std::uint16_t v = 0;
    for (int i = 0; i < 2; ++i) v |= static_cast<std::uint16_t>(u8()) << (8 * i);
    return v;
  }
  std::uint32_t u32() {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
  float f32() { return std::bit_cast<float>(u32()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::string str() {
    const std::uint32_t n = u32();
    need(n);
    std::string s = data_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  std::vector<std::uint8_t> raw(std::size_t n) {
    need(n);
    std::vector<std::uint8_t> v(data_.begin() + static_cast<std::ptrdiff_t>(pos_),
                                data_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return v;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > data_.size())
      throw DecodeError("checkpoint truncated at byte offset " +
                        std::to_string(pos_));
  }
  std::string data_;
  std::size_t pos_ = 0;
};

void put_layers(Writer& w, const LayerMats<float>& layers) {
  w.u32(static_cast<std::uint32_t>(layers.size()));
  for (const auto& m : layers) {
    w.u32(static_cast<std::uint32_t>(m.rows()));
    w.u32(static_cast<std::uint32_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(m(r, c));
  }
}

LayerMats<float> get_layers(Reader& r) {
  LayerMats<float> layers(r.u32());
  for (auto& m : layers) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    m.resize(rows, cols);
    for (std::uint32_t rr = 0; rr < rows; ++rr)
      for (std::uint32_t cc = 0; cc < cols; ++cc) m(rr, cc) = r.f32();
  }
  return layers;
}

// Mask record: shape header, Huffman dictionary, pad length, payload; all
// length prefixes little-endian u32.
void put_mask(Writer& w, const MaskLayers& mask) {
  const huffman::EncodedMask enc = huffman::encode_mask(mask);
  w.u32(static_cast<std::uint32_t>(enc.packed_meta.shapes.size()));
  for (auto [rows, cols] : enc.packed_meta.shapes) {
    w.u32(rows);
    w.u32(cols);
  }
  std::uint32_t dict_count = 0;
  for (int s = 0; s < 256; ++s)
    if (enc.code.code_lengths[static_cast<std::size_t>(s)] > 0) ++dict_count;
  w.u32(dict_count);
  for (int s = 0; s < 256; ++s)
    if (enc.code.code_lengths[static_cast<std::size_t>(s)] > 0) {
      w.u8(static_cast<std::uint8_t>(s));
      w.u8(enc.code.code_lengths[static_cast<std::size_t>(s)]);
    }
  w.u32(enc.packed_meta.pad_bits);
  w.u32(static_cast<std::uint32_t>(enc.code.payload_bits));
  w.u32(static_cast<std::uint32_t>(enc.code.payload.size()));
  w.bytes(enc.code.payload.data(), enc.code.payload.size());
}

MaskLayers get_mask(Reader& r) {
  huffman::EncodedMask enc;
  const std::uint32_t n_layers = r.u32();
  std::uint64_t total_bits = 0;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    enc.packed_meta.shapes.emplace_back(rows, cols);
    total_bits += std::uint64_t(rows) * cols;
  }
  const std::uint32_t dict_count = r.u32();
  for (std::uint32_t i = 0; i < dict_count; ++i) {
    const std::uint8_t symbol = r.u8();
    enc.code.code_lengths[symbol] = r.u8();
  }
  enc.packed_meta.pad_bits = r.u32();
  enc.code.payload_bits = r.u32();
  const std::uint32_t payload_len = r.u32();
  enc.code.payload = r.raw(payload_len);
  enc.code.symbol_count = (total_bits + enc.packed_meta.pad_bits) / 8;
  return huffman::decode_mask(enc);
}

void put_codebook(Writer& w, const quant::Codebook& cb) {
  w.u8(static_cast<std::uint8_t>(cb.bitwidth));
  w.u8(static_cast<std::uint8_t>(cb.bank));
  w.u16(static_cast<std::uint16_t>(cb.prefix));
  w.u32(static_cast<std::uint32_t>(cb.tables.size()));
  for (const auto& table : cb.tables) {
    w.u32(static_cast<std::uint32_t>(table.size()));
    for (float v : table) w.f32(v);
  }
}

quant::Codebook get_codebook(Reader& r) {
  quant::Codebook cb;
  cb.bitwidth = r.u8();
  cb.bank = r.u8();
  cb.prefix = r.u16();
  cb.tables.resize(r.u32());
  for (auto& table : cb.tables) {
    table.resize(r.u32());
    for (auto& v : table) v = r.f32();
  }
  return cb;
}

void put_record(Writer& w, const engine::TaskRecord& rec) {
  w.i32(rec.task);
  w.i32(rec.bank);
  w.i32(rec.shared_with);
  w.u8(rec.shared_pool ? 1 : 0);
  w.u8(rec.fallback ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(rec.kl_values.size()));
  for (const auto& [p, kl] : rec.kl_values) {
    w.i32(p);
    w.f64(kl);
  }
  w.i32(rec.psi);
  w.u8(rec.quant_warning ? 1 : 0);
  w.f64(rec.min_quant_margin);
  w.f64(rec.acc_valid_before_ft);
  w.f64(rec.acc_valid_after_ft);
  w.f64(rec.sparsity_before_ft);
  w.f64(rec.sparsity_after_ft);
  w.u8(rec.gamma_monotone ? 1 : 0);
  w.i64(rec.capacity.weight_bits);
  w.i64(rec.capacity.codebook_bits);
  w.i64(rec.capacity.mask_bits_raw);
  w.i64(rec.capacity.mask_bits_huffman);
  w.i64(rec.capacity.cap_total_bits);
  w.i64(rec.capacity.original_bits);
  w.f64(rec.capacity.ratio);
  w.u8(rec.capacity.accounting_mode == metrics::CapacityMode::kPerLayer ? 0 : 1);
  w.u8(rec.freeze_ok ? 1 : 0);
}

engine::TaskRecord get_record(Reader& r) {
  engine::TaskRecord rec;
  rec.task = r.i32();
  rec.bank = r.i32();
  rec.shared_with = r.i32();
  rec.shared_pool = r.u8() != 0;
  rec.fallback = r.u8() != 0;
  const std::uint32_t n_kl = r.u32();
  for (std::uint32_t i = 0; i < n_kl; ++i) {
    const int p = r.i32();
    rec.kl_values[p] = r.f64();
  }
  rec.psi = r.i32();
  rec.quant_warning = r.u8() != 0;
  rec.min_quant_margin = r.f64();
  rec.acc_valid_before_ft = r.f64();
  rec.acc_valid_after_ft = r.f64();
  rec.sparsity_before_ft = r.f64();
  rec.sparsity_after_ft = r.f64();
  rec.gamma_monotone = r.u8() != 0;
  rec.capacity.weight_bits = r.i64();
  rec.capacity.codebook_bits = r.i64();
  rec.capacity.mask_bits_raw = r.i64();
  rec.capacity.mask_bits_huffman = r.i64();
  rec.capacity.cap_total_bits = r.i64();
  rec.capacity.original_bits = r.i64();
  rec.capacity.ratio = r.f64();
  rec.capacity.accounting_mode = r.u8() == 0 ? metrics::CapacityMode::kPerLayer
                                             : metrics::CapacityMode::kPerTaskShared;
  rec.freeze_ok = r.u8() != 0;
  return rec;
}

}  // namespace

void save(const engine::EngineState& state, const std::string& config_echo,
          const std::string& path) {
  Writer w;
  w.bytes(reinterpret_cast<const std::uint8_t*>(kMagic), sizeof(kMagic));
  w.u32(kVersion);
  w.str(config_echo);

  w.u32(static_cast<std::uint32_t>(state.spec.layer_dims.size()));
  for (int d : state.spec.layer_dims) w.i32(d);
  w.u32(static_cast<std::uint32_t>(state.spec.activation));
  w.u64(state.spec.seed);

  w.u32(static_cast<std::uint32_t>(state.planes.size()));
  for (const auto& plane : state.planes) put_layers(w, plane);
  put_layers(w, state.scores);

  w.u32(static_cast<std::uint32_t>(state.maskset.per_task.size()));
  for (std::size_t t = 0; t < state.maskset.per_task.size(); ++t) {
    w.i32(state.maskset.task_bank[t]);
    put_mask(w, state.maskset.per_task[t]);
  }
  put_mask(w, state.consolidated_raw);

  w.u32(static_cast<std::uint32_t>(state.layout.max_banks));
  w.u32(static_cast<std::uint32_t>(state.layout.bank_tasks.size()));
  for (const auto& tasks : state.layout.bank_tasks) {
    w.u32(static_cast<std::uint32_t>(tasks.size()));
    for (int t : tasks) w.i32(t);
  }

  w.u32(static_cast<std::uint32_t>(state.codebooks.size()));
  for (const auto& cb : state.codebooks) put_codebook(w, cb);

  w.u32(static_cast<std::uint32_t>(state.replay.size()));
  for (const auto& buf : state.replay) {
    w.i32(buf.task);
    w.u32(static_cast<std::uint32_t>(buf.samples.rows()));
    w.u32(static_cast<std::uint32_t>(buf.samples.cols()));
    for (Eigen::Index i = 0; i < buf.samples.rows(); ++i)
      for (Eigen::Index j = 0; j < buf.samples.cols(); ++j)
        w.f32(buf.samples(i, j));
    w.u32(static_cast<std::uint32_t>(buf.labels.size()));
    for (int l : buf.labels) w.i32(l);
  }

  w.u32(static_cast<std::uint32_t>(state.records.size()));
  for (const auto& rec : state.records) put_record(w, rec);

  w.u32(static_cast<std::uint32_t>(state.accuracy_rows.size()));
  for (const auto& row : state.accuracy_rows) {
    w.u32(static_cast<std::uint32_t>(row.size()));
    for (double v : row) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(state.random_baseline.size()));
  for (double v : state.random_baseline) w.f64(v);
  w.u32(static_cast<std::uint32_t>(state.tasks_done));

  const std::filesystem::path target(path);
  if (target.has_parent_path())
    std::filesystem::create_directories(target.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out.write(w.data().data(), static_cast<std::streamsize>(w.data().size()));
}

Loaded load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string data((std::istreambuf_iterator<char>(in)),
                   std::istreambuf_iterator<char>());
  Reader r(std::move(data));
  const auto magic = r.raw(sizeof(kMagic));
  if (std::memcmp(magic.data(), kMagic, sizeof(kMagic)) != 0)
    throw DecodeError("not a checkpoint file: bad magic");
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw DecodeError("unsupported checkpoint version " + std::to_string(version));

  Loaded loaded;
  loaded.config_echo = r.str();
  engine::EngineState& s = loaded.state;

  s.spec.layer_dims.resize(r.u32());
  for (auto& d : s.spec.layer_dims) d = r.i32();
  s.spec.activation = static_cast<nn::Activation>(r.u32());
  s.spec.seed = r.u64();

  s.planes.resize(r.u32());
  for (auto& plane : s.planes) plane = get_layers(r);
  s.scores = get_layers(r);

  const std::uint32_t n_tasks = r.u32();
  for (std::uint32_t t = 0; t < n_tasks; ++t) {
    const int bank = r.i32();
    s.maskset.add_task(get_mask(r), bank);
  }
  s.consolidated_raw = get_mask(r);

  s.layout.max_banks = static_cast<int>(r.u32());
  s.layout.bank_tasks.resize(r.u32());
  for (auto& tasks : s.layout.bank_tasks) {
    tasks.resize(r.u32());
    for (auto& t : tasks) t = r.i32();
  }

  s.codebooks.resize(r.u32());
  for (auto& cb : s.codebooks) cb = get_codebook(r);

  s.replay.resize(r.u32());
  for (auto& buf : s.replay) {
    buf.task = r.i32();
    const std::uint32_t rows = r.u32();
    const std::uint32_t cols = r.u32();
    buf.samples.resize(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) buf.samples(i, j) = r.f32();
    buf.labels.resize(r.u32());
    for (auto& l : buf.labels) l = r.i32();
  }

  s.records.resize(r.u32());
  for (auto& rec : s.records) rec = get_record(r);

  s.accuracy_rows.resize(r.u32());
  for (auto& row : s.accuracy_rows) {
    row.resize(r.u32());
    for (auto& v : row) v = r.f64();
  }
  s.random_baseline.resize(r.u32());
  for (auto& v : s.random_baseline) v = r.f64();
  s.tasks_done = static_cast<int>(r.u32());
  return loaded;
}

std::optional<Loaded> try_load_compatible(const std::string& path,
                                          const std::string& config_echo) {
  if (!std::filesystem::exists(path)) return std::nullopt;
  Loaded loaded = load(path);
  if (loaded.config_echo != config_echo) return std::nullopt;
  return loaded;
}

}  // namespace subnetcl::checkpoint

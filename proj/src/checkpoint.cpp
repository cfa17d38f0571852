// SPDX-License-Identifier: Apache-2.0

#include "vsc/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <fstream>

#include "vsc/errors.hpp"

namespace vsc {

namespace {

constexpr char kMagic[4] = {'S', 'G', 'V', '1'};
constexpr std::uint16_t kVersion = 1;

void put_u16(std::string& out, std::uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  const std::uint64_t v = std::bit_cast<std::uint64_t>(d);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const unsigned char* data, std::size_t size, const std::string& what)
      : data_(data), size_(size), what_(what) {}

  bool eof() const { return pos_ == size_; }

  std::uint64_t uint(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(data_[pos_ + static_cast<std::size_t>(i)]) << (8 * i);
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(data_) + pos_, n);
    pos_ += n;
    return s;
  }

  double f64() { return std::bit_cast<double>(uint(8)); }

  void need(std::size_t n) const {
    if (pos_ + n > size_) throw FormatError(what_ + ": truncated file");
  }

 private:
  const unsigned char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string what_;
};

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

}  // namespace

void Checkpoint::put(const std::string& name, const Tensor& t) {
  auto it = index_.find(name);
  if (it != index_.end()) {
    entries_[it->second].tensor = Tensor(t.shape, t.data);
    return;
  }
  index_.emplace(name, entries_.size());
  entries_.push_back({name, Tensor(t.shape, t.data)});
}

const Tensor& Checkpoint::at(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw FormatError("checkpoint entry missing: " + name);
  return entries_[it->second].tensor;
}

void Checkpoint::save(const std::filesystem::path& path) const {
  std::string out;
  out.append(kMagic, 4);
  put_u16(out, kVersion);
  for (const auto& e : entries_) {
    if (e.name.size() > 0xffff) throw FormatError("checkpoint entry name too long: " + e.name);
    put_u16(out, static_cast<std::uint16_t>(e.name.size()));
    out.append(e.name);
    out.push_back(static_cast<char>(e.tensor.rank()));
    for (int d : e.tensor.shape) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : e.tensor.data) put_f64(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw FormatError("write failed: " + path.string());
}

Checkpoint Checkpoint::load(const std::filesystem::path& path) {
  const auto buf = read_file(path);
  Reader r(buf.data(), buf.size(), path.string());
  if (r.bytes(4) != std::string(kMagic, 4)) throw FormatError(path.string() + ": bad checkpoint magic");
  const auto version = r.uint(2);
  if (version != kVersion)
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint ck;
  while (!r.eof()) {
    const std::size_t name_len = static_cast<std::size_t>(r.uint(2));
    const std::string name = r.bytes(name_len);
    const int rank = static_cast<int>(r.uint(1));
    Shape shape;
    for (int i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.uint(4)));
    Tensor t(shape);
    for (auto& v : t.data) v = r.f64();
    ck.put(name, t);
  }
  return ck;
}

void store_params(Checkpoint& ck, const ParamList& params) {
  for (const auto& p : params) ck.put(p.name, *p.tensor);
}

void restore_params(const Checkpoint& ck, const ParamList& params) {
  for (const auto& p : params) {
    const Tensor& src = ck.at(p.name);
    if (src.shape != p.tensor->shape)
      throw FormatError("checkpoint entry " + p.name + " has shape " + shape_str(src.shape) +
                        ", expected " + shape_str(p.tensor->shape));
    p.tensor->data = src.data;
    p.tensor->grad.clear();
  }
}

}  // namespace vsc

#include "sakit/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace sakit {

namespace {

class Writer {
 public:
  template <class U>
  void put(U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    out_.insert(out_.end(), raw, raw + sizeof(U));
  }
  void put_bytes(std::string_view s) { out_.insert(out_.end(), s.begin(), s.end()); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> in) : in_(in) {}
  template <class U>
  U get() {
    need(sizeof(U));
    unsigned char raw[sizeof(U)];
    std::memcpy(raw, in_.data() + pos_, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(raw, raw + sizeof(U));
    pos_ += sizeof(U);
    U v;
    std::memcpy(&v, raw, sizeof(U));
    return v;
  }
  std::string get_bytes(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(in_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == in_.size(); }

 private:
  void need(std::size_t n) const {
    if (in_.size() - pos_ < n) throw IoError("checkpoint truncated");
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

template <class T>
void write_tensor(Writer& w, const BasicTensor<T>& t) {
  w.put<std::uint8_t>(static_cast<std::uint8_t>(dtype_of<T>()));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(t.rank()));
  for (int d : t.shape()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  for (T v : t.data()) w.put<T>(v);
}

template <class T>
BasicTensor<T> read_payload(Reader& r, Shape shape) {
  std::vector<T> data(shape_size(shape));
  for (auto& v : data) v = r.get<T>();
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <class T>
BasicTensor<T> convert(const AnyTensor& t) {
  return std::visit([](const auto& x) { return x.template cast<T>(); }, t);
}

}  // namespace

const AnyTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& [n, t] : tensors)
    if (n == name) return &t;
  return nullptr;
}

void Checkpoint::put(std::string name, AnyTensor t) {
  for (auto& [n, existing] : tensors)
    if (n == name) {
      existing = std::move(t);
      return;
    }
  tensors.emplace_back(std::move(name), std::move(t));
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  Writer w;
  w.put_bytes("SANC");
  w.put<std::uint32_t>(Checkpoint::kVersion);
  w.put<std::uint64_t>(ckpt.spec_text.size());
  w.put_bytes(ckpt.spec_text);
  w.put<std::uint64_t>(ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    if (name.size() > 0xffff) throw IoError("tensor name too long: " + name);
    w.put<std::uint16_t>(static_cast<std::uint16_t>(name.size()));
    w.put_bytes(name);
    std::visit([&](const auto& x) {
      if (x.rank() > 255) throw IoError("tensor rank too large: " + name);
      write_tensor(w, x);
    }, t);
  }
  return w.take();
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  Reader r(bytes);
  if (r.get_bytes(4) != "SANC") throw IoError("not a checkpoint (bad magic)");
  const auto version = r.get<std::uint32_t>();
  if (version != Checkpoint::kVersion)
    throw IoError("unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  c.spec_text = r.get_bytes(r.get<std::uint64_t>());
  const auto count = r.get<std::uint64_t>();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::string name = r.get_bytes(r.get<std::uint16_t>());
    const auto dtype = r.get<std::uint8_t>();
    const auto rank = r.get<std::uint8_t>();
    Shape shape;
    for (int k = 0; k < rank; ++k) shape.push_back(static_cast<int>(r.get<std::uint32_t>()));
    if (dtype == static_cast<std::uint8_t>(DType::f32))
      c.tensors.emplace_back(std::move(name), read_payload<float>(r, std::move(shape)));
    else if (dtype == static_cast<std::uint8_t>(DType::f64))
      c.tensors.emplace_back(std::move(name), read_payload<double>(r, std::move(shape)));
    else
      throw IoError("unknown dtype code " + std::to_string(dtype));
  }
  if (!r.done()) throw IoError("trailing bytes after checkpoint");
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

template <class T>
Checkpoint snapshot(const Graph<T>& graph) {
  Checkpoint c;
  c.spec_text = graph.spec().to_text();
  for (const auto& [name, t] : graph.params()) c.tensors.emplace_back(name, t);
  for (const auto& [name, t] : graph.buffers()) c.tensors.emplace_back(name, t);
  return c;
}

template <class T>
void restore(Graph<T>& graph, const Checkpoint& ckpt) {
  auto load = [&](ParamMap<T>& map) {
    for (auto& [name, t] : map) {
      const AnyTensor* src = ckpt.find(name);
      if (!src) throw IoError("checkpoint lacks tensor '" + name + "'");
      BasicTensor<T> v = convert<T>(*src);
      if (v.shape() != t.shape())
        throw ShapeError(name, "checkpoint shape " + shape_str(v.shape()) + " != " + shape_str(t.shape()));
      t = std::move(v);
    }
  };
  load(graph.params());
  load(graph.buffers());
}

TensorD as_double(const AnyTensor& t) { return convert<double>(t); }

template Checkpoint snapshot(const Graph<float>&);
template Checkpoint snapshot(const Graph<double>&);
template void restore(Graph<float>&, const Checkpoint&);
template void restore(Graph<double>&, const Checkpoint&);

}  // namespace sakit

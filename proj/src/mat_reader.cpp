#include "realdesc/mat_reader.hpp"

#include <zlib.h>

#include <cstring>

#include "realdesc/errors.hpp"
#include "realdesc/util.hpp"

namespace realdesc::mat {
namespace {

enum : uint32_t {
  miINT8 = 1, miUINT8 = 2, miINT16 = 3, miUINT16 = 4, miINT32 = 5, miUINT32 = 6, miSINGLE = 7, miDOUBLE = 9,
  miINT64 = 12, miUINT64 = 13, miMATRIX = 14, miCOMPRESSED = 15, miUTF8 = 16, miUTF16 = 17, miUTF32 = 18,
};

enum : uint8_t {
  mxCELL = 1, mxSTRUCT = 2, mxOBJECT = 3, mxCHAR = 4, mxSPARSE = 5, mxDOUBLE = 6, mxSINGLE = 7, mxINT8 = 8,
  mxUINT8 = 9, mxINT16 = 10, mxUINT16 = 11, mxINT32 = 12, mxUINT32 = 13, mxINT64 = 14, mxUINT64 = 15,
};

struct Element {
  uint32_t type = 0;
  std::string_view data;
};

class Reader {
 public:
  explicit Reader(std::string_view buf) : buf_(buf) {}
  bool done() const { return pos_ + 8 > buf_.size(); }

  Element next() {
    need(8);
    uint32_t first, second;
    std::memcpy(&first, buf_.data() + pos_, 4);
    std::memcpy(&second, buf_.data() + pos_ + 4, 4);
    Element e;
    if ((first >> 16) != 0) {
      e.type = first & 0xffff;
      const uint32_t n = first >> 16;
      if (n > 4) throw DataError("MAT small element longer than 4 bytes");
      e.data = buf_.substr(pos_ + 4, n);
      pos_ += 8;
      return e;
    }
    e.type = first;
    pos_ += 8;
    need(second);
    e.data = buf_.substr(pos_, second);
    pos_ += second;
    if (e.type != miCOMPRESSED) pos_ += (8 - second % 8) % 8;
    return e;
  }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > buf_.size()) throw DataError("truncated MAT element");
  }
  std::string_view buf_;
  std::size_t pos_ = 0;
};

template <typename T>
void widen(std::string_view data, std::vector<double>& out) {
  const std::size_t n = data.size() / sizeof(T);
  out.reserve(out.size() + n);
  for (std::size_t i = 0; i < n; ++i) {
    T v;
    std::memcpy(&v, data.data() + i * sizeof(T), sizeof(T));
    out.push_back(static_cast<double>(v));
  }
}

std::vector<double> numeric(const Element& e) {
  std::vector<double> out;
  switch (e.type) {
    case miINT8: widen<int8_t>(e.data, out); break;
    case miUINT8: case miUTF8: widen<uint8_t>(e.data, out); break;
    case miINT16: widen<int16_t>(e.data, out); break;
    case miUINT16: case miUTF16: widen<uint16_t>(e.data, out); break;
    case miINT32: widen<int32_t>(e.data, out); break;
    case miUINT32: case miUTF32: widen<uint32_t>(e.data, out); break;
    case miSINGLE: widen<float>(e.data, out); break;
    case miDOUBLE: widen<double>(e.data, out); break;
    case miINT64: widen<int64_t>(e.data, out); break;
    case miUINT64: widen<uint64_t>(e.data, out); break;
    default: throw DataError("unsupported MAT numeric type " + std::to_string(e.type));
  }
  return out;
}

std::string inflate(std::string_view data) {
  z_stream zs{};
  if (inflateInit(&zs) != Z_OK) throw DataError("zlib init failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(data.data()));
  zs.avail_in = static_cast<uInt>(data.size());
  std::string out;
  char chunk[1 << 16];
  int rc;
  do {
    zs.next_out = reinterpret_cast<Bytef*>(chunk);
    zs.avail_out = sizeof chunk;
    rc = ::inflate(&zs, Z_NO_FLUSH);
    if (rc != Z_OK && rc != Z_STREAM_END) {
      inflateEnd(&zs);
      throw DataError("corrupt compressed MAT element");
    }
    out.append(chunk, sizeof chunk - zs.avail_out);
  } while (rc != Z_STREAM_END && zs.avail_in > 0);
  inflateEnd(&zs);
  return out;
}

std::string utf8_from_codes(const std::vector<double>& codes) {
  std::string out;
  for (double d : codes) {
    auto c = static_cast<uint32_t>(d);
    if (c < 0x80) {
      out += static_cast<char>(c);
    } else if (c < 0x800) {
      out += static_cast<char>(0xC0 | (c >> 6));
      out += static_cast<char>(0x80 | (c & 0x3F));
    } else {
      out += static_cast<char>(0xE0 | (c >> 12));
      out += static_cast<char>(0x80 | ((c >> 6) & 0x3F));
      out += static_cast<char>(0x80 | (c & 0x3F));
    }
  }
  return out;
}

Value parse_matrix(std::string_view body, std::string* name_out);

Value parse_element(const Element& e, std::string* name_out, std::string& storage) {
  if (e.type == miCOMPRESSED) {
    storage = inflate(e.data);
    Reader r(storage);
    auto inner = r.next();
    std::string nested;
    return parse_element(inner, name_out, nested);
  }
  if (e.type != miMATRIX) throw DataError("expected a MAT matrix element, got type " + std::to_string(e.type));
  return parse_matrix(e.data, name_out);
}

Value parse_matrix(std::string_view body, std::string* name_out) {
  Value v;
  if (body.empty()) return v;
  Reader r(body);
  const auto flags_el = r.next();
  if (flags_el.data.size() < 4) throw DataError("bad MAT array flags");
  uint32_t flags;
  std::memcpy(&flags, flags_el.data.data(), 4);
  const auto cls = static_cast<uint8_t>(flags & 0xff);
  const bool complex = (flags & 0x800) != 0;
  for (double d : numeric(r.next())) v.dims.push_back(static_cast<int64_t>(d));
  const auto name_el = r.next();
  if (name_out) *name_out = std::string(name_el.data);
  std::size_t numel = 1;
  for (auto d : v.dims) numel *= static_cast<std::size_t>(d);

  switch (cls) {
    case mxDOUBLE: case mxSINGLE: case mxINT8: case mxUINT8: case mxINT16: case mxUINT16: case mxINT32:
    case mxUINT32: case mxINT64: case mxUINT64: {
      v.kind = Value::Kind::kNumeric;
      v.numbers = numeric(r.next());
      if (complex && !r.done()) r.next();
      break;
    }
    case mxCHAR: {
      v.kind = Value::Kind::kChar;
      const auto data = r.done() ? std::vector<double>{} : numeric(r.next());
      const int64_t rows = v.dims.empty() ? 0 : v.dims[0];
      const int64_t cols = v.dims.size() < 2 ? 0 : v.dims[1];
      if (rows <= 1) {
        v.text = utf8_from_codes(data);
      } else {
        for (int64_t i = 0; i < rows; ++i) {
          std::vector<double> row;
          for (int64_t j = 0; j < cols; ++j) row.push_back(data[static_cast<std::size_t>(j * rows + i)]);
          if (i > 0) v.text += '\n';
          v.text += utf8_from_codes(row);
        }
      }
      break;
    }
    case mxCELL: {
      v.kind = Value::Kind::kCell;
      for (std::size_t i = 0; i < numel; ++i) {
        std::string storage;
        v.cells.push_back(parse_element(r.next(), nullptr, storage));
      }
      break;
    }
    case mxSTRUCT: case mxOBJECT: {
      v.kind = Value::Kind::kStruct;
      if (cls == mxOBJECT) r.next();
      const auto len_el = r.next();
      int32_t len = 0;
      std::memcpy(&len, len_el.data.data(), 4);
      const auto names_el = r.next();
      if (len <= 0) throw DataError("bad MAT struct field name length");
      const std::size_t nfields = names_el.data.size() / static_cast<std::size_t>(len);
      for (std::size_t f = 0; f < nfields; ++f) {
        auto raw = names_el.data.substr(f * static_cast<std::size_t>(len), static_cast<std::size_t>(len));
        v.field_names.emplace_back(raw.substr(0, raw.find('\0')));
      }
      for (std::size_t i = 0; i < numel; ++i) {
        std::map<std::string, Value> el;
        for (const auto& fname : v.field_names) {
          std::string storage;
          el[fname] = parse_element(r.next(), nullptr, storage);
        }
        v.elements.push_back(std::move(el));
      }
      break;
    }
    default:
      v.kind = Value::Kind::kEmpty;
      break;
  }
  return v;
}

}  // namespace

std::size_t Value::numel() const {
  std::size_t n = 1;
  for (auto d : dims) n *= static_cast<std::size_t>(d);
  return dims.empty() ? 0 : n;
}

const Value& Value::field(const std::string& name, std::size_t element) const {
  if (kind != Kind::kStruct || element >= elements.size()) throw DataError("MAT value is not a struct with element " + std::to_string(element));
  auto it = elements[element].find(name);
  if (it == elements[element].end()) throw DataError("MAT struct lacks field '" + name + "'");
  return it->second;
}

double Value::scalar() const {
  if (kind != Kind::kNumeric || numbers.empty()) throw DataError("MAT value is not numeric");
  return numbers[0];
}

std::vector<std::string> Value::strings() const {
  if (kind == Kind::kChar) return split(text, '\n');
  if (kind != Kind::kCell) throw DataError("MAT value is not a cell array of strings");
  std::vector<std::string> out;
  for (const auto& c : cells) {
    if (c.kind == Kind::kCell && c.cells.size() == 1) out.push_back(c.cells[0].text);
    else out.push_back(c.text);
  }
  return out;
}

std::map<std::string, Value> parse(const std::string& bytes) {
  if (bytes.size() < 128) throw DataError("file too small for a MAT header");
  if (bytes[126] != 'I' || bytes[127] != 'M') throw DataError("not a little-endian level-5 MAT-file");
  std::map<std::string, Value> out;
  Reader r(std::string_view(bytes).substr(128));
  while (!r.done()) {
    auto e = r.next();
    std::string name, storage;
    auto v = parse_element(e, &name, storage);
    if (!name.empty()) out[name] = std::move(v);
  }
  return out;
}

std::map<std::string, Value> read(const std::filesystem::path& path) { return parse(read_file(path)); }

}  // namespace realdesc::mat

#include "palette/tensor_store.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <limits>

#include "palette/error.hpp"
#include "palette/util.hpp"

namespace palette {

static_assert(std::endian::native == std::endian::little,
              "checkpoint I/O assumes a little-endian host");

std::int64_t TensorSpec::numel() const noexcept {
  std::int64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void TensorSpec::validate() const {
  if (name.empty()) throw Error(ErrorCode::ShapeMismatch, "tensor name is empty");
  for (auto d : shape) {
    if (d < 1) throw Error(ErrorCode::ShapeMismatch, "non-positive dimension", name);
  }
  if (numel() != static_cast<std::int64_t>(data.size()))
    throw Error(ErrorCode::ShapeMismatch,
                "shape product " + std::to_string(numel()) + " != data length " +
                    std::to_string(data.size()),
                name);
}

bool bit_equal(const TensorSpec& a, const TensorSpec& b) noexcept {
  return a.name == b.name && a.dtype == b.dtype && a.shape == b.shape &&
         a.data.size() == b.data.size() &&
         (a.data.empty() ||
          std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(float)) == 0);
}

void Checkpoint::add(TensorSpec tensor) {
  auto name = tensor.name;
  auto [it, inserted] = tensors.emplace(name, std::move(tensor));
  if (!inserted) throw Error(ErrorCode::DuplicateName, "duplicate tensor name", name);
}

const TensorSpec& Checkpoint::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::SchemaMismatch, "missing tensor", name);
  return it->second;
}

TensorSpec& Checkpoint::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw Error(ErrorCode::SchemaMismatch, "missing tensor", name);
  return it->second;
}

std::vector<std::string> Checkpoint::names() const {
  std::vector<std::string> out;
  out.reserve(tensors.size());
  for (const auto& [name, _] : tensors) out.push_back(name);
  return out;
}

bool bit_equal(const Checkpoint& a, const Checkpoint& b) noexcept {
  if (a.metadata != b.metadata || a.tensors.size() != b.tensors.size()) return false;
  auto ia = a.tensors.begin();
  auto ib = b.tensors.begin();
  for (; ia != a.tensors.end(); ++ia, ++ib) {
    if (ia->first != ib->first || !bit_equal(ia->second, ib->second)) return false;
  }
  return true;
}

void require_same_schema(const Checkpoint& a, const Checkpoint& b, std::string_view what) {
  const std::string ctx(what);
  if (a.tensors.size() != b.tensors.size())
    throw Error(ErrorCode::SchemaMismatch, "tensor counts differ", ctx);
  auto ia = a.tensors.begin();
  auto ib = b.tensors.begin();
  for (; ia != a.tensors.end(); ++ia, ++ib) {
    if (ia->first != ib->first)
      throw Error(ErrorCode::SchemaMismatch, "tensor names differ: " + ia->first + " vs " + ib->first,
                  ctx);
    if (ia->second.shape != ib->second.shape || ia->second.dtype != ib->second.dtype)
      throw Error(ErrorCode::SchemaMismatch, "shape or dtype differs", ctx.empty() ? ia->first : ctx + ":" + ia->first);
  }
}

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  json header = json::object();
  std::uint64_t offset = 0;
  for (const auto& [name, t] : ckpt.tensors) {
    t.validate();
    if (name != t.name) throw Error(ErrorCode::ShapeMismatch, "map key differs from tensor name", name);
    std::uint64_t bytes = t.data.size() * sizeof(float);
    header[name] = {{"dtype", "F32"}, {"shape", t.shape}, {"data_offsets", {offset, offset + bytes}}};
    offset += bytes;
  }
  if (!ckpt.metadata.empty()) {
    json meta = json::object();
    for (const auto& [k, v] : ckpt.metadata) meta[k] = v;
    header["__metadata__"] = meta;
  }
  std::string text = header.dump(-1, ' ', false, json::error_handler_t::strict);
  // Pad to 8-byte alignment like the reference writer does.
  while (text.size() % 8 != 0) text.push_back(' ');

  std::string out;
  out.reserve(8 + text.size() + offset);
  std::uint64_t n = text.size();
  char len[8];
  std::memcpy(len, &n, 8);
  out.append(len, 8);
  out += text;
  for (const auto& [_, t] : ckpt.tensors) {
    out.append(reinterpret_cast<const char*>(t.data.data()), t.data.size() * sizeof(float));
  }
  return out;
}

namespace {

struct Entry {
  std::string name;
  std::vector<std::int64_t> shape;
  std::uint64_t begin = 0;
  std::uint64_t end = 0;
};

[[noreturn]] void malformed(const std::string& why, const std::string& ctx = {}) {
  throw Error(ErrorCode::MalformedHeader, why, ctx);
}

Entry parse_entry(const std::string& name, const json& value) {
  if (!value.is_object()) malformed("tensor entry is not an object", name);
  if (!value.contains("dtype") || !value["dtype"].is_string()) malformed("missing dtype", name);
  if (value["dtype"].get<std::string>() != "F32")
    throw Error(ErrorCode::UnsupportedDtype, "only F32 is supported, got " + value["dtype"].get<std::string>(),
                name);
  if (!value.contains("shape") || !value["shape"].is_array()) malformed("missing shape", name);
  if (!value.contains("data_offsets") || !value["data_offsets"].is_array() ||
      value["data_offsets"].size() != 2)
    malformed("missing data_offsets", name);
  Entry e;
  e.name = name;
  for (const auto& d : value["shape"]) {
    if (!d.is_number_integer() || d.get<std::int64_t>() < 1) malformed("bad shape dimension", name);
    e.shape.push_back(d.get<std::int64_t>());
  }
  for (const auto& o : value["data_offsets"]) {
    if (!o.is_number_unsigned()) malformed("bad data offset", name);
  }
  e.begin = value["data_offsets"][0].get<std::uint64_t>();
  e.end = value["data_offsets"][1].get<std::uint64_t>();
  if (e.end < e.begin) malformed("data offsets are reversed", name);
  std::uint64_t numel = 1;
  for (auto d : e.shape) {
    if (numel > std::numeric_limits<std::uint64_t>::max() / static_cast<std::uint64_t>(d))
      malformed("shape overflows", name);
    numel *= static_cast<std::uint64_t>(d);
  }
  if (e.end - e.begin != numel * sizeof(float))
    throw Error(ErrorCode::ShapeMismatch, "declared offsets do not match shape", name);
  return e;
}

}  // namespace

Checkpoint parse_checkpoint(std::string_view bytes) {
  return parse_checkpoint(std::as_bytes(std::span(bytes.data(), bytes.size())));
}

Checkpoint parse_checkpoint(std::span<const std::byte> bytes) {
  if (bytes.size() < 8) malformed("file shorter than length prefix");
  std::uint64_t n = 0;
  std::memcpy(&n, bytes.data(), 8);
  if (n > bytes.size() - 8) malformed("header length exceeds file size");
  std::string_view text(reinterpret_cast<const char*>(bytes.data() + 8), n);

  std::set<std::string> seen;
  std::string duplicate;
  json::parser_callback_t cb = [&](int depth, json::parse_event_t event, json& parsed) {
    if (event == json::parse_event_t::key && depth == 1) {
      auto key = parsed.get<std::string>();
      if (!seen.insert(key).second && duplicate.empty()) duplicate = key;
    }
    return true;
  };
  json header;
  try {
    header = json::parse(text.begin(), text.end(), cb);
  } catch (const json::exception& e) {
    malformed(std::string("header is not valid JSON: ") + e.what());
  }
  if (!duplicate.empty()) throw Error(ErrorCode::DuplicateName, "duplicate tensor name", duplicate);
  if (!header.is_object()) malformed("header is not a JSON object");

  Checkpoint ckpt;
  std::vector<Entry> entries;
  for (auto it = header.begin(); it != header.end(); ++it) {
    if (it.key() == "__metadata__") {
      if (!it->is_object()) malformed("__metadata__ is not an object");
      for (auto m = it->begin(); m != it->end(); ++m) {
        if (!m->is_string()) malformed("metadata value is not a string", m.key());
        ckpt.metadata[m.key()] = m->get<std::string>();
      }
      continue;
    }
    if (it.key().empty()) malformed("empty tensor name");
    entries.push_back(parse_entry(it.key(), *it));
  }

  const std::uint64_t buffer_size = bytes.size() - 8 - n;
  std::vector<const Entry*> by_offset;
  for (const auto& e : entries) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](const Entry* a, const Entry* b) { return a->begin < b->begin; });
  std::uint64_t cursor = 0;
  for (const Entry* e : by_offset) {
    if (e->begin < cursor) malformed("overlapping data offsets", e->name);
    if (e->begin != cursor) malformed("gap in tensor buffer", e->name);
    if (e->end > buffer_size) malformed("data offsets exceed buffer", e->name);
    cursor = e->end;
  }
  if (cursor != buffer_size) malformed("trailing bytes after tensor buffer");

  const std::byte* buffer = bytes.data() + 8 + n;
  for (const auto& e : entries) {
    TensorSpec t;
    t.name = e.name;
    t.shape = e.shape;
    t.data.resize((e.end - e.begin) / sizeof(float));
    if (!t.data.empty()) std::memcpy(t.data.data(), buffer + e.begin, e.end - e.begin);
    ckpt.add(std::move(t));
  }
  return ckpt;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  auto bytes = read_file(path);
  try {
    return parse_checkpoint(std::string_view(bytes));
  } catch (Error& e) {
    if (e.context().empty()) throw Error(e.code(), e.what(), path.string());
    throw;
  }
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  atomic_write(path, serialize_checkpoint(ckpt));
}

Checkpoint delta(const Checkpoint& a, const Checkpoint& b) {
  require_same_schema(a, b, "delta");
  Checkpoint out;
  out.metadata = a.metadata;
  for (const auto& [name, ta] : a.tensors) {
    const auto& tb = b.at(name);
    TensorSpec t{name, DType::F32, ta.shape, std::vector<float>(ta.data.size())};
    for (std::size_t i = 0; i < t.data.size(); ++i) t.data[i] = ta.data[i] - tb.data[i];
    out.add(std::move(t));
  }
  return out;
}

bool glob_match(std::string_view pattern, std::string_view text) noexcept {
  // Iterative wildcard match with single-star backtracking.
  std::size_t p = 0, t = 0;
  std::size_t star = std::string_view::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
      ++p;
      ++t;
    } else if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (star != std::string_view::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

TensorSubset select_ffn(const Checkpoint& ckpt, std::string_view pattern) {
  if (pattern.empty()) throw Error(ErrorCode::InvalidPattern, "empty glob");
  if (pattern.find_first_of("[]{}") != std::string_view::npos)
    throw Error(ErrorCode::InvalidPattern, "only * and ? wildcards are supported", std::string(pattern));
  TensorSubset out;
  for (const auto& [name, _] : ckpt.tensors) {
    if (glob_match(pattern, name)) out.names.insert(name);
  }
  if (out.empty()) log::warn("EmptySelection: pattern '" + std::string(pattern) + "' matched no tensors");
  return out;
}

}  // namespace palette

#include "sakit/network_spec.hpp"

#include <cctype>
#include <charconv>
#include <sstream>

#include "sakit/error.hpp"

namespace sakit {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_ident(std::string_view s) {
  if (s.empty()) return false;
  for (char c : s)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-'))
      return false;
  return true;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

bool LayerSpec::has(std::string_view key) const {
  for (const auto& [k, v] : args)
    if (k == key) return true;
  return false;
}

const std::string& LayerSpec::arg(std::string_view key) const {
  for (const auto& [k, v] : args)
    if (k == key) return v;
  throw ShapeError(name, "missing argument '" + std::string(key) + "'");
}

int LayerSpec::int_arg(std::string_view key) const {
  const std::string& v = arg(key);
  int out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ShapeError(name, "argument '" + std::string(key) + "' is not an integer: " + v);
  return out;
}

int LayerSpec::int_arg(std::string_view key, int fallback) const {
  return has(key) ? int_arg(key) : fallback;
}

double LayerSpec::real_arg(std::string_view key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = arg(key);
  try {
    std::size_t used = 0;
    const double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ShapeError(name, "argument '" + std::string(key) + "' is not a number: " + v);
  }
}

std::string LayerSpec::str_arg(std::string_view key, std::string fallback) const {
  return has(key) ? arg(key) : fallback;
}

LayerSpec& LayerSpec::set(std::string key, std::string value) {
  for (auto& [k, v] : args)
    if (k == key) {
      v = std::move(value);
      return *this;
    }
  args.emplace_back(std::move(key), std::move(value));
  return *this;
}

int NetworkSpec::index_of(std::string_view layer_name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == layer_name) return static_cast<int>(i);
  return -1;
}

const LayerSpec& NetworkSpec::layer(std::string_view layer_name) const {
  const int i = index_of(layer_name);
  if (i < 0) throw ShapeError(std::string(layer_name), "no such layer");
  return layers[static_cast<std::size_t>(i)];
}

LayerSpec& NetworkSpec::layer(std::string_view layer_name) {
  const int i = index_of(layer_name);
  if (i < 0) throw ShapeError(std::string(layer_name), "no such layer");
  return layers[static_cast<std::size_t>(i)];
}

std::string NetworkSpec::to_text() const {
  std::ostringstream os;
  os << "network " << name << "\n";
  for (const auto& l : layers) {
    os << l.name << " = " << l.op << "(";
    for (std::size_t i = 0; i < l.args.size(); ++i)
      os << (i ? ", " : "") << l.args[i].first << "=" << l.args[i].second;
    os << ")";
    if (!l.inputs.empty()) {
      os << " <- ";
      for (std::size_t i = 0; i < l.inputs.size(); ++i) os << (i ? ", " : "") << l.inputs[i];
    }
    os << "\n";
  }
  return os.str();
}

NetworkSpec NetworkSpec::parse(std::string_view text) {
  NetworkSpec spec;
  bool have_header = false;
  int line_no = 0;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) {
      if (end == text.size()) break;
      continue;
    }
    if (!have_header) {
      if (line.substr(0, 8) != "network ") throw ParseError(line_no, "expected 'network <name>' header");
      spec.name = std::string(trim(line.substr(8)));
      if (!valid_ident(spec.name)) throw ParseError(line_no, "invalid network name");
      have_header = true;
      continue;
    }
    LayerSpec layer;
    const std::size_t eq = line.find('=');
    const std::size_t open = line.find('(');
    const std::size_t close = line.rfind(')');
    if (eq == std::string_view::npos || open == std::string_view::npos ||
        close == std::string_view::npos || !(eq < open && open < close))
      throw ParseError(line_no, "expected 'name = op(args) <- inputs'");
    layer.name = std::string(trim(line.substr(0, eq)));
    layer.op = std::string(trim(line.substr(eq + 1, open - eq - 1)));
    if (!valid_ident(layer.name)) throw ParseError(line_no, "invalid layer name");
    if (!valid_ident(layer.op)) throw ParseError(line_no, "invalid op name");
    const std::string_view arg_text = trim(line.substr(open + 1, close - open - 1));
    if (!arg_text.empty()) {
      for (std::string_view kv : split(arg_text, ',')) {
        const std::size_t e = kv.find('=');
        if (e == std::string_view::npos) throw ParseError(line_no, "argument without '='");
        std::string key(trim(kv.substr(0, e)));
        std::string value(trim(kv.substr(e + 1)));
        if (!valid_ident(key) || value.empty()) throw ParseError(line_no, "malformed argument");
        if (layer.has(key)) throw ParseError(line_no, "duplicate argument '" + key + "'");
        layer.args.emplace_back(std::move(key), std::move(value));
      }
    }
    std::string_view rest = trim(line.substr(close + 1));
    if (!rest.empty()) {
      if (rest.substr(0, 2) != "<-") throw ParseError(line_no, "expected '<-' before inputs");
      for (std::string_view in : split(trim(rest.substr(2)), ',')) {
        if (!valid_ident(in)) throw ParseError(line_no, "invalid input name");
        layer.inputs.emplace_back(in);
      }
    }
    if (spec.index_of(layer.name) >= 0) throw ParseError(line_no, "duplicate layer '" + layer.name + "'");
    for (const auto& in : layer.inputs)
      if (spec.index_of(in) < 0)
        throw ParseError(line_no, "input '" + in + "' is not defined before use");
    spec.layers.push_back(std::move(layer));
    if (end == text.size()) break;
  }
  if (!have_header) throw ParseError(0, "empty network text");
  return spec;
}

}  // namespace sakit

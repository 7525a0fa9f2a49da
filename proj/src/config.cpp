// SPDX-License-Identifier: Apache-2.0
#include "helut/config.hpp"

#include <cctype>
#include <fstream>
#include <limits>
#include <sstream>

namespace helut {

namespace {

std::pair<int, int> line_column(const std::string& text, std::size_t offset) {
  int line = 1;
  int column = 1;
  for (std::size_t i = 0; i < offset && i < text.size(); ++i) {
    if (text[i] == '\n') {
      ++line;
      column = 1;
    } else {
      ++column;
    }
  }
  return {line, column};
}

// Minimal scanner that walks raw JSON text to find value positions.
class Scanner {
 public:
  explicit Scanner(const std::string& text) : s_(text) {}

  std::size_t pos = 0;

  void ws() {
    while (pos < s_.size() && std::isspace(static_cast<unsigned char>(s_[pos]))) ++pos;
  }

  bool peek(char c) {
    ws();
    return pos < s_.size() && s_[pos] == c;
  }

  std::string string() {
    std::string out;
    ++pos;
    while (pos < s_.size() && s_[pos] != '"') {
      if (s_[pos] == '\\' && pos + 1 < s_.size()) {
        out += s_[pos + 1];
        pos += 2;
      } else {
        out += s_[pos++];
      }
    }
    ++pos;
    return out;
  }

  void skip_value() {
    ws();
    if (pos >= s_.size()) return;
    const char c = s_[pos];
    if (c == '"') {
      string();
    } else if (c == '{' || c == '[') {
      const char close = c == '{' ? '}' : ']';
      ++pos;
      ws();
      if (peek(close)) {
        ++pos;
        return;
      }
      while (pos < s_.size()) {
        if (c == '{') {
          ws();
          string();
          ws();
          ++pos;  // ':'
        }
        skip_value();
        ws();
        if (pos < s_.size() && s_[pos] == ',') {
          ++pos;
          continue;
        }
        ++pos;  // close
        return;
      }
    } else {
      while (pos < s_.size() && s_[pos] != ',' && s_[pos] != '}' && s_[pos] != ']' &&
             !std::isspace(static_cast<unsigned char>(s_[pos]))) {
        ++pos;
      }
    }
  }

  // Moves to the member `key` of the object at pos; false if absent.
  bool member(const std::string& key) {
    if (!peek('{')) return false;
    ++pos;
    while (true) {
      ws();
      if (pos >= s_.size() || s_[pos] == '}') return false;
      const std::string k = string();
      ws();
      ++pos;  // ':'
      ws();
      if (k == key) return true;
      skip_value();
      ws();
      if (pos < s_.size() && s_[pos] == ',') ++pos;
    }
  }

  bool element(std::size_t index) {
    if (!peek('[')) return false;
    ++pos;
    for (std::size_t i = 0;; ++i) {
      ws();
      if (pos >= s_.size() || s_[pos] == ']') return false;
      if (i == index) return true;
      skip_value();
      ws();
      if (pos < s_.size() && s_[pos] == ',') ++pos;
    }
  }

 private:
  const std::string& s_;
};

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file", path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

std::shared_ptr<const JsonDocument> parse_json_text(std::string text, std::string source) {
  auto doc = std::make_shared<JsonDocument>();
  try {
    doc->value = json::parse(text);
  } catch (const json::parse_error& e) {
    auto [line, col] = line_column(text, e.byte > 0 ? e.byte - 1 : 0);
    std::string what = e.what();
    const auto cut = what.find("syntax error");
    throw ConfigError(cut == std::string::npos ? what : what.substr(cut), source, line, col);
  }
  doc->text = std::move(text);
  doc->source = std::move(source);
  return doc;
}

std::shared_ptr<const JsonDocument> load_json_file(const std::filesystem::path& path) {
  auto doc = parse_json_text(read_file(path), path.string());
  auto mutable_doc = std::const_pointer_cast<JsonDocument>(doc);
  mutable_doc->directory = path.parent_path();
  return doc;
}

std::pair<int, int> locate_json_pointer(const std::string& text,
                                        const json::json_pointer& pointer) {
  Scanner sc(text);
  std::vector<std::string> tokens;
  for (auto p = pointer; !p.empty(); p = p.parent_pointer()) tokens.insert(tokens.begin(), p.back());
  for (const auto& tok : tokens) {
    sc.ws();
    bool ok = false;
    if (sc.peek('[')) {
      std::size_t idx = 0;
      try {
        idx = static_cast<std::size_t>(std::stoull(tok));
      } catch (...) {
        return {0, 0};
      }
      ok = sc.element(idx);
    } else {
      ok = sc.member(tok);
    }
    if (!ok) return {0, 0};
  }
  sc.ws();
  return line_column(text, sc.pos);
}

bool ConfigNode::has(const std::string& key) const {
  return value_->is_object() && value_->contains(key);
}

ConfigNode ConfigNode::at(const std::string& key) const {
  if (!value_->is_object()) fail("expected an object");
  auto it = value_->find(key);
  if (it == value_->end()) fail("missing required key '" + key + "'");
  return ConfigNode(doc_, pointer_ / key, &*it);
}

ConfigNode ConfigNode::at(std::size_t index) const {
  if (!value_->is_array()) fail("expected an array");
  if (index >= value_->size()) fail("index " + std::to_string(index) + " out of range");
  return ConfigNode(doc_, pointer_ / index, &(*value_)[index]);
}

std::size_t ConfigNode::size() const {
  if (!value_->is_array() && !value_->is_object()) fail("expected an array or object");
  return value_->size();
}

std::string ConfigNode::as_string() const {
  if (!value_->is_string()) fail("expected a string");
  return value_->get<std::string>();
}

double ConfigNode::as_double() const {
  if (!value_->is_number()) fail("expected a number");
  return value_->get<double>();
}

std::int64_t ConfigNode::as_int() const {
  if (value_->is_number_integer()) return value_->get<std::int64_t>();
  if (value_->is_number_float()) {
    const double d = value_->get<double>();
    if (d == static_cast<double>(static_cast<std::int64_t>(d))) return static_cast<std::int64_t>(d);
  }
  fail("expected an integer");
}

bool ConfigNode::as_bool() const {
  if (!value_->is_boolean()) fail("expected a boolean");
  return value_->get<bool>();
}

std::vector<double> ConfigNode::as_doubles() const {
  std::vector<double> out;
  for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).as_double());
  return out;
}

std::vector<std::int64_t> ConfigNode::as_ints() const {
  std::vector<std::int64_t> out;
  for (std::size_t i = 0; i < size(); ++i) out.push_back(at(i).as_int());
  return out;
}

std::string ConfigNode::get_string(const std::string& key, const std::string& fallback) const {
  return has(key) ? at(key).as_string() : fallback;
}

double ConfigNode::get_double(const std::string& key, double fallback) const {
  return has(key) ? at(key).as_double() : fallback;
}

std::int64_t ConfigNode::get_int(const std::string& key, std::int64_t fallback) const {
  return has(key) ? at(key).as_int() : fallback;
}

bool ConfigNode::get_bool(const std::string& key, bool fallback) const {
  return has(key) ? at(key).as_bool() : fallback;
}

std::filesystem::path ConfigNode::resolve_path(const std::string& relative) const {
  std::filesystem::path p(relative);
  if (p.is_absolute() || doc_->directory.empty()) return p;
  return doc_->directory / p;
}

void ConfigNode::fail(const std::string& message) const {
  auto [line, col] = locate_json_pointer(doc_->text, pointer_);
  const std::string where = pointer_.empty() ? "" : " at " + pointer_.to_string();
  throw ConfigError(message + where, doc_->source, line, col);
}

}  // namespace helut

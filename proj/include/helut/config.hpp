// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "helut/errors.hpp"

namespace helut {

using json = nlohmann::json;

struct JsonDocument {
  json value;
  std::string text;
  std::string source;
  std::filesystem::path directory;
};

std::shared_ptr<const JsonDocument> parse_json_text(std::string text, std::string source = {});
std::shared_ptr<const JsonDocument> load_json_file(const std::filesystem::path& path);

// 1-based line and column of the value addressed by `pointer`, or {0, 0}.
std::pair<int, int> locate_json_pointer(const std::string& text, const json::json_pointer& pointer);

// A position inside a parsed document. Accessors throw ConfigError carrying the
// line of the offending value.
class ConfigNode {
 public:
  explicit ConfigNode(std::shared_ptr<const JsonDocument> doc)
      : doc_(std::move(doc)), value_(&doc_->value) {}

  const json& raw() const { return *value_; }
  const json::json_pointer& pointer() const { return pointer_; }
  const JsonDocument& document() const { return *doc_; }

  bool has(const std::string& key) const;
  ConfigNode at(const std::string& key) const;
  ConfigNode at(std::size_t index) const;
  std::size_t size() const;
  bool is_object() const { return value_->is_object(); }
  bool is_array() const { return value_->is_array(); }
  bool is_string() const { return value_->is_string(); }
  bool is_null() const { return value_->is_null(); }

  std::string as_string() const;
  double as_double() const;
  std::int64_t as_int() const;
  bool as_bool() const;
  std::vector<double> as_doubles() const;
  std::vector<std::int64_t> as_ints() const;

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  // Resolves a path relative to the document's directory.
  std::filesystem::path resolve_path(const std::string& relative) const;

  [[noreturn]] void fail(const std::string& message) const;

 private:
  ConfigNode(std::shared_ptr<const JsonDocument> doc, json::json_pointer ptr, const json* value)
      : doc_(std::move(doc)), pointer_(std::move(ptr)), value_(value) {}

  std::shared_ptr<const JsonDocument> doc_;
  json::json_pointer pointer_;
  const json* value_;
};

}  // namespace helut

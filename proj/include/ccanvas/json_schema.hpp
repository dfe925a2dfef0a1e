#pragma once

// A small JSON Schema (draft-04) validator. Covers the keywords the
// nbformat v4 schemas use: type, enum, required, properties,
// patternProperties, additionalProperties, items, min/maxItems,
// uniqueItems, min/maxLength, pattern, minimum/maximum, oneOf, anyOf,
// allOf, not and local $ref. Unknown keywords are ignored, as the
// draft requires.

#include <map>
#include <memory>
#include <mutex>
#include <regex>
#include <string>
#include <vector>

#include "ccanvas/error.hpp"
#include "json.hpp"

namespace ccanvas {

class JsonSchema {
 public:
  using json = nlohmann::json;

  explicit JsonSchema(json schema) : root_(std::move(schema)) {}

  /// Empty when the instance is valid; otherwise one message per failure.
  std::vector<std::string> validate(const json& instance) const {
    std::vector<std::string> errors;
    check(root_, instance, "$", errors);
    return errors;
  }

  bool is_valid(const json& instance) const { return validate(instance).empty(); }

 private:
  const json& resolve(const std::string& ref) const {
    if (ref.rfind("#", 0) != 0) throw Error(ErrorCode::invalid_argument, "only local $ref supported: " + ref);
    const json* node = &root_;
    std::string pointer = ref.substr(1);
    if (!pointer.empty()) node = &root_.at(json::json_pointer(pointer));
    return *node;
  }

  const std::regex& regex_for(const std::string& pattern) const {
    std::lock_guard lock(regex_mutex_);
    auto it = regex_cache_.find(pattern);
    if (it == regex_cache_.end()) {
      it = regex_cache_.emplace(pattern, std::make_unique<std::regex>(pattern, std::regex::ECMAScript)).first;
    }
    return *it->second;
  }

  bool search(const std::string& pattern, const std::string& text) const {
    return std::regex_search(text, regex_for(pattern));
  }

  static bool has_type(const json& v, const std::string& type) {
    if (type == "object") return v.is_object();
    if (type == "array") return v.is_array();
    if (type == "string") return v.is_string();
    if (type == "boolean") return v.is_boolean();
    if (type == "null") return v.is_null();
    if (type == "number") return v.is_number();
    if (type == "integer") {
      if (v.is_number_integer()) return true;
      if (v.is_number_float()) {
        double d = v.get<double>();
        return d == static_cast<double>(static_cast<long long>(d));
      }
      return false;
    }
    return false;
  }

  void check(const json& schema, const json& v, const std::string& path, std::vector<std::string>& errors) const {
    if (schema.is_boolean()) {
      if (!schema.get<bool>()) errors.push_back(path + ": not allowed");
      return;
    }
    if (!schema.is_object()) return;
    if (auto ref = schema.find("$ref"); ref != schema.end()) {
      // draft-04: siblings of $ref are ignored
      check(resolve(ref->get<std::string>()), v, path, errors);
      return;
    }

    if (auto t = schema.find("type"); t != schema.end()) {
      bool ok = false;
      if (t->is_string()) ok = has_type(v, t->get<std::string>());
      else for (const auto& alt : *t) ok = ok || has_type(v, alt.get<std::string>());
      if (!ok) {
        errors.push_back(path + ": expected type " + t->dump());
        return;
      }
    }
    if (auto e = schema.find("enum"); e != schema.end()) {
      bool found = false;
      for (const auto& option : *e) found = found || option == v;
      if (!found) errors.push_back(path + ": value " + v.dump() + " not in enum " + e->dump());
    }

    if (v.is_object()) check_object(schema, v, path, errors);
    if (v.is_array()) check_array(schema, v, path, errors);
    if (v.is_string()) check_string(schema, v, path, errors);
    if (v.is_number()) check_number(schema, v, path, errors);

    if (auto all = schema.find("allOf"); all != schema.end()) {
      for (const auto& sub : *all) check(sub, v, path, errors);
    }
    if (auto any = schema.find("anyOf"); any != schema.end()) {
      bool ok = false;
      for (const auto& sub : *any) {
        std::vector<std::string> scratch;
        check(sub, v, path, scratch);
        ok = ok || scratch.empty();
      }
      if (!ok) errors.push_back(path + ": matches none of anyOf");
    }
    if (auto one = schema.find("oneOf"); one != schema.end()) {
      int matches = 0;
      for (const auto& sub : *one) {
        std::vector<std::string> scratch;
        check(sub, v, path, scratch);
        matches += scratch.empty() ? 1 : 0;
      }
      if (matches != 1) errors.push_back(path + ": matches " + std::to_string(matches) + " branches of oneOf");
    }
    if (auto n = schema.find("not"); n != schema.end()) {
      std::vector<std::string> scratch;
      check(*n, v, path, scratch);
      if (scratch.empty()) errors.push_back(path + ": matches a 'not' schema");
    }
  }

  void check_object(const json& schema, const json& v, const std::string& path,
                    std::vector<std::string>& errors) const {
    if (auto req = schema.find("required"); req != schema.end()) {
      for (const auto& name : *req) {
        if (!v.contains(name.get<std::string>())) {
          errors.push_back(path + ": missing required property '" + name.get<std::string>() + "'");
        }
      }
    }
    const auto props = schema.find("properties");
    const auto patterns = schema.find("patternProperties");
    const auto additional = schema.find("additionalProperties");
    for (const auto& [key, value] : v.items()) {
      const auto sub_path = path + "." + key;
      bool matched = false;
      if (props != schema.end() && props->contains(key)) {
        matched = true;
        check((*props)[key], value, sub_path, errors);
      }
      if (patterns != schema.end()) {
        for (const auto& [pattern, sub] : patterns->items()) {
          if (search(pattern, key)) {
            matched = true;
            check(sub, value, sub_path, errors);
          }
        }
      }
      if (!matched && additional != schema.end()) {
        if (additional->is_boolean()) {
          if (!additional->get<bool>()) errors.push_back(sub_path + ": additional property not allowed");
        } else {
          check(*additional, value, sub_path, errors);
        }
      }
    }
  }

  void check_array(const json& schema, const json& v, const std::string& path,
                   std::vector<std::string>& errors) const {
    if (auto items = schema.find("items"); items != schema.end()) {
      if (items->is_array()) {
        for (std::size_t i = 0; i < v.size() && i < items->size(); ++i) {
          check((*items)[i], v[i], path + "[" + std::to_string(i) + "]", errors);
        }
      } else {
        for (std::size_t i = 0; i < v.size(); ++i) check(*items, v[i], path + "[" + std::to_string(i) + "]", errors);
      }
    }
    if (auto m = schema.find("minItems"); m != schema.end() && v.size() < m->get<std::size_t>()) {
      errors.push_back(path + ": too few items");
    }
    if (auto m = schema.find("maxItems"); m != schema.end() && v.size() > m->get<std::size_t>()) {
      errors.push_back(path + ": too many items");
    }
    if (auto u = schema.find("uniqueItems"); u != schema.end() && u->get<bool>()) {
      for (std::size_t i = 0; i < v.size(); ++i) {
        for (std::size_t k = i + 1; k < v.size(); ++k) {
          if (v[i] == v[k]) errors.push_back(path + ": duplicate items");
        }
      }
    }
  }

  void check_string(const json& schema, const json& v, const std::string& path,
                    std::vector<std::string>& errors) const {
    const auto& s = v.get_ref<const std::string&>();
    // lengths count code points
    std::size_t length = 0;
    for (unsigned char c : s) length += (c & 0xC0) != 0x80 ? 1 : 0;
    if (auto m = schema.find("minLength"); m != schema.end() && length < m->get<std::size_t>()) {
      errors.push_back(path + ": string too short");
    }
    if (auto m = schema.find("maxLength"); m != schema.end() && length > m->get<std::size_t>()) {
      errors.push_back(path + ": string too long");
    }
    if (auto p = schema.find("pattern"); p != schema.end() && !search(p->get<std::string>(), s)) {
      errors.push_back(path + ": does not match pattern " + p->dump());
    }
  }

  static void check_number(const json& schema, const json& v, const std::string& path,
                           std::vector<std::string>& errors) {
    const double d = v.get<double>();
    if (auto m = schema.find("minimum"); m != schema.end()) {
      bool exclusive = schema.value("exclusiveMinimum", false);
      if (exclusive ? d <= m->get<double>() : d < m->get<double>()) errors.push_back(path + ": below minimum");
    }
    if (auto m = schema.find("maximum"); m != schema.end()) {
      bool exclusive = schema.value("exclusiveMaximum", false);
      if (exclusive ? d >= m->get<double>() : d > m->get<double>()) errors.push_back(path + ": above maximum");
    }
  }

  json root_;
  mutable std::mutex regex_mutex_;
  mutable std::map<std::string, std::unique_ptr<std::regex>> regex_cache_;
};

}  // namespace ccanvas

#pragma once

// Shared helpers for the test suites: scratch directories, random canvas
// generation and a reference model of the small Python programs used to
// check session forking.

#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "ccanvas/base64.hpp"
#include "ccanvas/canvas.hpp"

namespace testing_support {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("ccanvas-test-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::permissions(path_, fs::perms::owner_all, fs::perm_options::add, ec);
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline bool wait_until(const std::function<bool()>& pred, std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  return pred();
}

/// The code of the ccanvas::Error thrown by `f`, as text so failures read
/// well; "none" if nothing was thrown.
inline std::string thrown(const std::function<void()>& f) {
  try {
    f();
  } catch (const ccanvas::Error& e) {
    return std::string(ccanvas::to_string(e.code()));
  }
  return "none";
}

// Random canvases.

inline std::string random_text(std::mt19937_64& rng, std::size_t max_len) {
  static const std::vector<std::string> pieces = {"a", "b", "x", "1", " ", "\n", "\t", "\"", "'", "\\", "{", "}",
                                                  "é", "→", "日本", "=", "+", "#", "\r\n", "print(x)"};
  std::uniform_int_distribution<std::size_t> len(0, max_len), pick(0, pieces.size() - 1);
  std::string s;
  for (std::size_t i = 0, n = len(rng); i < n; ++i) s += pieces[pick(rng)];
  return s;
}

inline double random_coord(std::mt19937_64& rng) {
  // Mix of integral and fractional positions, including negative ones.
  std::uniform_int_distribution<int> whole(-2000, 2000), frac(0, 3);
  return whole(rng) + 0.25 * frac(rng);
}

inline ccanvas::Rect random_rect(std::mt19937_64& rng, double max_size = 600) {
  std::uniform_real_distribution<double> size(1.0, max_size);
  return {{random_coord(rng), random_coord(rng)}, std::round(size(rng) * 4) / 4, std::round(size(rng) * 4) / 4};
}

inline ccanvas::OutputItem random_item(std::mt19937_64& rng) {
  namespace mime = ccanvas::mime;
  std::uniform_int_distribution<int> kind(0, 4), byte(0, 255), n(0, 40);
  switch (kind(rng)) {
    case 0: return {std::string(mime::stream_stdout), random_text(rng, 12)};
    case 1: return {std::string(mime::stream_stderr), random_text(rng, 12)};
    case 2: return {std::string(mime::text_plain), random_text(rng, 8)};
    case 3: {
      std::string raw;
      for (int i = 0, len = n(rng); i < len; ++i) raw += static_cast<char>(byte(rng));
      return {std::string(mime::image_png), ccanvas::base64::encode(raw)};
    }
    default: {
      nlohmann::json j = {{"k", n(rng)}, {"s", random_text(rng, 4)}, {"list", {1, 2.5, nullptr, true}}};
      return {std::string(mime::application_json), j.dump()};
    }
  }
}

inline ccanvas::Bundle random_bundle(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n(0, 4);
  ccanvas::Bundle b;
  for (int i = 0, len = n(rng); i < len; ++i) b.push_back(random_item(rng));
  return b;
}

struct RandomCanvasOptions {
  int operations = 40;
  bool allow_orphans = true;  // detached outputs whose origin cell was deleted
};

/// Builds a canvas by applying a random sequence of model operations, so
/// the result is always internally consistent.
inline ccanvas::Canvas random_canvas(std::mt19937_64& rng, const std::string& id, RandomCanvasOptions opt = {}) {
  using namespace ccanvas;
  Canvas c = make_canvas(id, random_text(rng, 5));
  std::uniform_int_distribution<int> op(0, 9), coin(0, 1);
  auto pick = [&](const auto& map) -> std::string {
    if (map.empty()) return {};
    std::uniform_int_distribution<std::size_t> i(0, map.size() - 1);
    auto it = map.begin();
    std::advance(it, i(rng));
    return it->first;
  };
  int sessions = 0;
  for (int step = 0; step < opt.operations; ++step) {
    switch (op(rng)) {
      case 0:
      case 1:
      case 2: {
        auto cell = create_cell(c, random_text(rng, 10), random_rect(rng));
        if (coin(rng) && coin(rng)) {
          auto& stored = c.cells.at(cell.id);
          stored.metadata[std::string(cell_meta::kind)] = std::string(cell_meta::non_code);
          stored.metadata[std::string(cell_meta::cell_type)] = coin(rng) ? "markdown" : "raw";
          stored.metadata["note"] = random_text(rng, 3);
        }
        break;
      }
      case 3:
        create_environment(c, random_rect(rng, 1500), coin(rng) ? "#4D9DE0" : "#e15554",
                           "fork-" + std::to_string(++sessions));
        break;
      case 4:
      case 5: {
        auto cid = pick(c.cells);
        if (cid.empty() || !c.cells.at(cid).is_code()) break;
        std::uniform_int_distribution<std::int64_t> count(1, 50);
        auto n = count(rng);
        c.cells.at(cid).execution_count = n;
        attach_or_update_output(c, cid, random_bundle(rng), ProducedBy{coin(rng) ? "main" : "fork-1", n});
        break;
      }
      case 6: {
        auto oid = pick(c.outputs);
        if (!oid.empty() && !c.outputs.at(oid).detached) detach_output(c, oid);
        break;
      }
      case 7: {
        auto oid = pick(c.outputs);
        if (!oid.empty()) move_output(c, oid, {random_coord(rng), random_coord(rng)});
        break;
      }
      case 8: {
        auto eid = pick(c.environments);
        if (!eid.empty()) move_environment(c, eid, {random_coord(rng) / 4, random_coord(rng) / 4});
        break;
      }
      case 9: {
        auto cid = pick(c.cells);
        if (!cid.empty() && coin(rng)) delete_cell(c, cid);
        else if (auto eid = pick(c.environments); !eid.empty()) delete_environment(c, eid);
        break;
      }
    }
  }
  if (!opt.allow_orphans) {
    for (auto it = c.outputs.begin(); it != c.outputs.end();) {
      if (it->second.detached && !c.cells.contains(it->second.origin_cell_id)) it = c.outputs.erase(it);
      else ++it;
    }
  }
  return c;
}

// Reference model of straight-line Python programs over ints, strings and
// lists. Lists are shared so aliasing (`l1 = l0`) behaves as in Python.

using IntList = std::shared_ptr<std::vector<std::int64_t>>;
using Value = std::variant<std::int64_t, std::string, IntList>;
using State = std::map<std::string, Value>;

inline const std::vector<std::string>& variable_pool() {
  static const std::vector<std::string> pool = {"a0", "a1", "a2", "a3", "s0", "s1", "s2", "l0", "l1", "l2"};
  return pool;
}

inline std::string repr(const Value& v) {
  if (auto* i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (auto* s = std::get_if<std::string>(&v)) return "'" + *s + "'";
  const auto& list = *std::get<IntList>(v);
  std::string out = "[";
  for (std::size_t k = 0; k < list.size(); ++k) out += (k ? ", " : "") + std::to_string(list[k]);
  return out + "]";
}

/// Expression whose repr lists every pool variable (None when unbound).
inline std::string state_query() {
  std::string q = "[";
  for (std::size_t k = 0; k < variable_pool().size(); ++k) {
    q += (k ? ", " : "") + std::string("globals().get('") + variable_pool()[k] + "')";
  }
  return q + "]";
}

inline std::string expected_query(const State& s) {
  std::string out = "[";
  for (std::size_t k = 0; k < variable_pool().size(); ++k) {
    auto it = s.find(variable_pool()[k]);
    out += (k ? ", " : "") + (it == s.end() ? std::string("None") : repr(it->second));
  }
  return out + "]";
}

/// Deep copy that keeps aliasing between names, like pickling the
/// namespace in one piece.
inline State clone(const State& s) {
  std::map<const void*, IntList> copies;
  State out;
  for (const auto& [name, v] : s) {
    if (auto* l = std::get_if<IntList>(&v)) {
      auto& copy = copies[l->get()];
      if (!copy) copy = std::make_shared<std::vector<std::int64_t>>(**l);
      out[name] = copy;
    } else {
      out[name] = v;
    }
  }
  return out;
}

inline std::int64_t py_mod(std::int64_t a, std::int64_t m) { return ((a % m) + m) % m; }

/// Generates one statement valid in `s`, applies it to `s` and returns its
/// source text.
inline std::string random_statement(std::mt19937_64& rng, State& s) {
  std::uniform_int_distribution<int> small(-50, 50), kind(0, 11), idx3(0, 2), idx4(0, 3);
  auto bound = [&](char prefix) {
    std::vector<std::string> names;
    for (const auto& [n, _] : s) {
      if (n[0] == prefix) names.push_back(n);
    }
    return names;
  };
  auto any_of = [&](const std::vector<std::string>& names) {
    std::uniform_int_distribution<std::size_t> i(0, names.size() - 1);
    return names[i(rng)];
  };
  static const std::vector<std::string> words = {"ab", "canvas", "x", "Fork", "cell", "zz"};
  std::uniform_int_distribution<std::size_t> word(0, words.size() - 1);

  for (;;) {
    const auto a = "a" + std::to_string(idx4(rng));
    const auto str = "s" + std::to_string(idx3(rng));
    const auto l = "l" + std::to_string(idx3(rng));
    const auto ints = bound('a'), strs = bound('s'), lists = bound('l');
    switch (kind(rng)) {
      case 0: {
        auto k = small(rng);
        s[a] = std::int64_t{k};
        return a + " = " + std::to_string(k);
      }
      case 1: {
        if (ints.empty()) break;
        auto src = any_of(ints);
        auto k = small(rng), j = small(rng);
        s[a] = py_mod(std::get<std::int64_t>(s[src]) * k + j, 1009);
        return a + " = (" + src + " * " + std::to_string(k) + " + " + std::to_string(j) + ") % 1009";
      }
      case 2: {
        if (lists.empty()) break;
        auto src = any_of(lists);
        s[a] = static_cast<std::int64_t>(std::get<IntList>(s[src])->size());
        return a + " = len(" + src + ")";
      }
      case 3: {
        auto w = words[word(rng)];
        s[str] = w;
        return str + " = '" + w + "'";
      }
      case 4: {
        if (strs.empty()) break;
        auto src = any_of(strs);
        auto t = std::get<std::string>(s[src]) + "xy";
        s[str] = t.size() > 6 ? t.substr(t.size() - 6) : t;
        return str + " = (" + src + " + 'xy')[-6:]";
      }
      case 5: {
        if (ints.empty()) break;
        auto src = any_of(ints);
        s[str] = std::to_string(std::get<std::int64_t>(s[src]));
        return str + " = str(" + src + ")";
      }
      case 6: {
        auto k1 = small(rng), k2 = small(rng);
        s[l] = std::make_shared<std::vector<std::int64_t>>(std::vector<std::int64_t>{k1, k2});
        return l + " = [" + std::to_string(k1) + ", " + std::to_string(k2) + "]";
      }
      case 7:
      case 8: {
        if (lists.empty()) break;
        auto dst = any_of(lists);
        auto& list = *std::get<IntList>(s[dst]);
        if (list.size() >= 8) {
          list.erase(list.begin());
          return "del " + dst + "[0]";
        }
        if (!ints.empty()) {
          auto src = any_of(ints);
          list.push_back(std::get<std::int64_t>(s[src]));
          return dst + ".append(" + src + ")";
        }
        auto k = small(rng);
        list.push_back(k);
        return dst + ".append(" + std::to_string(k) + ")";
      }
      case 9: {
        if (lists.empty()) break;
        auto src = any_of(lists);
        s[l] = std::get<IntList>(s[src]);
        return l + " = " + src;
      }
      case 10: {
        if (lists.empty()) break;
        auto src = any_of(lists);
        auto copy = *std::get<IntList>(s[src]);
        auto k = small(rng);
        const bool trim = copy.size() >= 8;
        if (trim) copy.erase(copy.begin());
        copy.push_back(k);
        s[l] = std::make_shared<std::vector<std::int64_t>>(std::move(copy));
        return l + " = " + src + (trim ? "[1:]" : "") + " + [" + std::to_string(k) + "]";
      }
      case 11: {
        if (lists.empty()) break;
        auto src = any_of(lists);
        auto copy = *std::get<IntList>(s[src]);
        std::sort(copy.begin(), copy.end());
        s[l] = std::make_shared<std::vector<std::int64_t>>(std::move(copy));
        return l + " = sorted(" + src + ")";
      }
    }
  }
}

inline std::string random_program(std::mt19937_64& rng, State& s, int min_len, int max_len) {
  std::uniform_int_distribution<int> len(min_len, max_len);
  std::string src;
  for (int i = 0, n = len(rng); i < n; ++i) src += random_statement(rng, s) + "\n";
  return src;
}

}  // namespace testing_support

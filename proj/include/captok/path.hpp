#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "captok/errors.hpp"

namespace captok {

// Canonical form: leading "/", no ".", no "..", no empty segments, no
// trailing slash except the root itself. ".." is rejected outright rather
// than resolved.
inline Result<std::string> normalize_path(std::string_view raw) {
    if (raw.empty()) return Error{Err::invalid_path, "empty path"};
    if (raw.find('\0') != std::string_view::npos)
        return Error{Err::invalid_path, "embedded NUL"};
    if (raw.front() != '/')
        return Error{Err::relative_path, std::string(raw)};

    std::string out;
    out.reserve(raw.size());
    std::size_t i = 0;
    while (i < raw.size()) {
        while (i < raw.size() && raw[i] == '/') ++i;
        if (i >= raw.size()) break;
        std::size_t j = i;
        while (j < raw.size() && raw[j] != '/') ++j;
        std::string_view seg = raw.substr(i, j - i);
        if (seg == ".") {
            i = j;
            continue;
        }
        if (seg == "..")
            return Error{Err::traversal_rejected, std::string(raw)};
        out += '/';
        out.append(seg);
        i = j;
    }
    if (out.empty()) out = "/";
    return out;
}

inline bool is_canonical_path(std::string_view p) {
    auto n = normalize_path(p);
    return n.ok() && n.value() == p;
}

// Splits a canonical path into its segments; root yields an empty list.
inline std::vector<std::string_view> path_segments(std::string_view canonical) {
    std::vector<std::string_view> segs;
    std::size_t i = 1;
    while (i < canonical.size()) {
        std::size_t j = canonical.find('/', i);
        if (j == std::string_view::npos) j = canonical.size();
        segs.push_back(canonical.substr(i, j - i));
        i = j + 1;
    }
    return segs;
}

// True when `ancestor` equals `path` or is a segment-boundary prefix of it.
// Both inputs must be canonical. "/data" covers "/data/x" but not "/database".
inline bool is_path_ancestor_or_equal(std::string_view ancestor, std::string_view path) {
    if (ancestor == "/") return true;
    if (path.size() < ancestor.size()) return false;
    if (path.compare(0, ancestor.size(), ancestor) != 0) return false;
    return path.size() == ancestor.size() || path[ancestor.size()] == '/';
}

} // namespace captok

#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "captok/errors.hpp"
#include "captok/path.hpp"

namespace captok {

enum class Op { read, write };

inline const char *to_string(Op op) { return op == Op::read ? "read" : "write"; }

inline Result<Op> op_from_string(std::string_view s) {
    if (s == "read") return Op::read;
    if (s == "write") return Op::write;
    return Error{Err::unknown_op, std::string(s)};
}

// One capability atom: an operation bound to a canonical absolute path
// prefix. Wire form is exactly "<op>:<path>".
struct Permission {
    Op op = Op::read;
    std::string path = "/";

    bool operator==(const Permission &) const = default;

    std::string str() const { return std::string(to_string(op)) + ":" + path; }
};

inline Result<Permission> parse_permission(std::string_view item) {
    if (item.empty()) return Error{Err::invalid_scope, "empty scope item"};
    auto colon = item.find(':');
    if (colon == std::string_view::npos)
        return Error{Err::invalid_scope, "missing ':' in \"" + std::string(item) + "\""};
    auto op = op_from_string(item.substr(0, colon));
    if (!op) return op.error();
    auto path = normalize_path(item.substr(colon + 1));
    if (!path) return path.error();
    return Permission{op.value(), std::move(path).value()};
}

// Scope strings are space separated with single spaces; an empty string is
// the empty scope list.
inline Result<std::vector<Permission>> parse_scope(std::string_view s) {
    std::vector<Permission> perms;
    if (s.empty()) return perms;
    std::size_t i = 0;
    while (true) {
        std::size_t j = s.find(' ', i);
        std::string_view item = s.substr(i, j == std::string_view::npos ? std::string_view::npos : j - i);
        auto p = parse_permission(item);
        if (!p) return p.error();
        perms.push_back(std::move(p).value());
        if (j == std::string_view::npos) break;
        i = j + 1;
    }
    return perms;
}

inline std::string print_scope(const std::vector<Permission> &perms) {
    std::string out;
    for (const auto &p : perms) {
        if (!out.empty()) out += ' ';
        out += p.str();
    }
    return out;
}

} // namespace captok

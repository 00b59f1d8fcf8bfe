#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "captok/errors.hpp"
#include "captok/path.hpp"
#include "captok/scope.hpp"

namespace captok {

// An ACL is what a gateway enforces: the token's permissions re-rooted to
// the gateway mount.
using Acl = std::vector<Permission>;

// True iff some permission grants `op` on `path` or an ancestor at a
// segment boundary. Read and write are independent.
inline bool permits(std::span<const Permission> perms, Op op, std::string_view canonical_path) {
    for (const auto &p : perms) {
        if (p.op == op && is_path_ancestor_or_equal(p.path, canonical_path)) return true;
    }
    return false;
}

inline bool permits(const std::vector<Permission> &perms, Op op, std::string_view canonical_path) {
    return permits(std::span<const Permission>(perms), op, canonical_path);
}

// True when `inner` is dominated by `outer`: same op and outer's path is an
// ancestor-or-equal of inner's.
inline bool dominates(const Permission &outer, const Permission &inner) {
    return outer.op == inner.op && is_path_ancestor_or_equal(outer.path, inner.path);
}

inline bool dominated_by_any(std::span<const Permission> outers, const Permission &inner) {
    for (const auto &o : outers) {
        if (dominates(o, inner)) return true;
    }
    return false;
}

// Re-roots the permissions that touch the subtree under `mount_prefix` and
// drops the rest; one token may serve several gateways with different
// mounts. A permission at or above the mount covers the whole mount and
// re-roots to "/".
inline Acl acl_from_scopes(std::span<const Permission> scopes, std::string_view mount_prefix) {
    Acl acl;
    for (const auto &p : scopes) {
        if (is_path_ancestor_or_equal(p.path, mount_prefix)) {
            acl.push_back(Permission{p.op, "/"});
        } else if (is_path_ancestor_or_equal(mount_prefix, p.path)) {
            std::string rel = mount_prefix == "/" ? p.path : p.path.substr(mount_prefix.size());
            acl.push_back(Permission{p.op, std::move(rel)});
        }
    }
    return acl;
}

// Narrowing on re-issue: every requested atom must be dominated by some
// parent atom. An empty request means "no narrowing" and returns the parent
// grant unchanged.
inline Result<std::vector<Permission>> attenuate(std::span<const Permission> parent,
                                                 std::span<const Permission> requested) {
    if (requested.empty())
        return std::vector<Permission>(parent.begin(), parent.end());
    for (const auto &req : requested) {
        if (!dominated_by_any(parent, req))
            return Error{Err::escalation, req.str() + " not granted by parent scopes"};
    }
    return std::vector<Permission>(requested.begin(), requested.end());
}

inline Result<std::vector<Permission>> attenuate(const std::vector<Permission> &parent,
                                                 const std::vector<Permission> &requested) {
    return attenuate(std::span<const Permission>(parent), std::span<const Permission>(requested));
}

} // namespace captok

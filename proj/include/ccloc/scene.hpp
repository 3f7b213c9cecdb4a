// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef CCLOC_SCENE_HPP
#define CCLOC_SCENE_HPP

// Synthetic street scene and image-source multipath ground truth.
//
// Geometry is 2.5D: walls are vertical rectangles (a 2D segment extruded
// from z = 0 to its height), reflections are solved in the horizontal plane
// and the height difference is folded into the unfolded path length. Only
// the direct path and single-bounce specular reflections are generated.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "json.hpp"

#include "ccloc/array_model.hpp"
#include "ccloc/error.hpp"
#include "ccloc/random.hpp"

namespace ccloc::scene {

using array::ArrayConfig;
using array::cplx;
using array::kPi;
using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;

inline constexpr double kSpeedOfLight = 299792458.0;

// Wraps an angle to [-pi, pi).
inline double wrap_angle(double a)
{
    double w = std::fmod(a + kPi, 2.0 * kPi);
    if (w < 0.0)
        w += 2.0 * kPi;
    return w - kPi;
}

struct Box3 {
    Vec3 lo = Vec3::Zero();
    Vec3 hi = Vec3::Zero();

    bool contains(const Vec3& p, double tol = 1e-9) const
    {
        for (int i = 0; i < 3; ++i)
            if (p[i] < lo[i] - tol || p[i] > hi[i] + tol)
                return false;
        return true;
    }
};

// Axis-aligned rectangle in the horizontal plane.
struct Rect2 {
    Vec2 lo = Vec2::Zero();
    Vec2 hi = Vec2::Zero();

    double area() const { return (hi - lo).prod(); }
    bool contains(const Vec2& p) const
    {
        return p.x() >= lo.x() && p.x() <= hi.x() && p.y() >= lo.y() && p.y() <= hi.y();
    }
};

struct Wall {
    Vec2 a = Vec2::Zero();
    Vec2 b = Vec2::Zero();
    double height = 0.0;
    double gamma = 0.6;  // reflection coefficient in (0, 1]
};

struct BaseStation {
    int id = 0;
    Vec3 position = Vec3::Zero();
    ArrayConfig array;
    double boresight = 0.0;  // azimuth of the array broadside, radians
};

enum class BsMode { los_dominant, nlos_dominant };

inline std::string to_string(BsMode m)
{
    return m == BsMode::los_dominant ? "los_dominant" : "nlos_dominant";
}

inline BsMode parse_bs_mode(const std::string& s)
{
    if (s == "los_dominant" || s == "los")
        return BsMode::los_dominant;
    if (s == "nlos_dominant" || s == "nlos")
        return BsMode::nlos_dominant;
    throw ConfigError("scene: unknown bs_mode '" + s + "'");
}

// Parameters of the two-street crossing. Street lengths are end to end;
// obstacles are kiosks / parked vehicles scattered over the street area.
struct SceneConfig {
    double street_length = 550.0;
    double street_width = 40.0;
    double wall_height = 20.0;
    BsMode mode = BsMode::los_dominant;
    std::uint64_t seed = 7;

    double carrier_frequency = 28e9;
    int bs_elements = 64;
    int ue_elements = 16;
    double spacing_ratio = 0.5;
    double wall_gamma = 0.6;

    // Negative heights select the mode default (high mast near the crossing,
    // low street furniture mount at the street ends).
    double bs_height = -1.0;
    double ue_height_min = 1.0;
    double ue_height_max = 2.0;

    int n_obstacles = 40;
    double obstacle_length_min = 4.0;
    double obstacle_length_max = 10.0;
    double obstacle_height = 3.5;
    double obstacle_gamma = 0.5;

    double effective_bs_height() const
    {
        if (bs_height >= 0.0)
            return bs_height;
        return mode == BsMode::los_dominant ? 12.0 : 3.0;
    }

    void validate() const
    {
        if (!(street_length > 0.0) || !(street_width > 0.0) || !(wall_height > 0.0))
            throw ConfigError("scene: street_length, street_width and wall_height must be > 0");
        if (street_width * 2.0 >= street_length)
            throw ConfigError("scene: street_width must be less than half the street_length");
        if (!(carrier_frequency > 0.0))
            throw ConfigError("scene: carrier_frequency must be > 0");
        if (bs_elements < 1 || ue_elements < 1)
            throw ConfigError("scene: array sizes must be >= 1");
        if (!(wall_gamma > 0.0 && wall_gamma <= 1.0) || !(obstacle_gamma > 0.0 && obstacle_gamma <= 1.0))
            throw ConfigError("scene: reflection coefficients must lie in (0, 1]");
        if (!(ue_height_min >= 0.0) || ue_height_max < ue_height_min || ue_height_max > wall_height)
            throw ConfigError("scene: invalid UE height range");
        if (n_obstacles < 0 || !(obstacle_length_min > 0.0) || obstacle_length_max < obstacle_length_min ||
            obstacle_length_max >= street_width / 2.0 || !(obstacle_height > 0.0))
            throw ConfigError("scene: invalid obstacle parameters");
        if (effective_bs_height() > wall_height)
            throw ConfigError("scene: bs_height above wall_height");
    }
};

struct Scene {
    Box3 bounds;
    std::vector<Wall> walls;
    std::vector<BaseStation> base_stations;
    std::vector<Rect2> walkable;  // disjoint rectangles UEs are drawn from
    double ue_height_min = 1.0;
    double ue_height_max = 2.0;
    ArrayConfig ue_array;
    double ue_boresight = 0.0;  // all UE arrays share the global x axis
    std::uint64_t rng_seed = 0;
    BsMode mode = BsMode::los_dominant;

    double wavelength() const { return ue_array.wavelength; }

    const BaseStation& bs(int id) const
    {
        for (const auto& b : base_stations)
            if (b.id == id)
                return b;
        throw ConfigError("scene: unknown base station id " + std::to_string(id));
    }
};

struct Path {
    double aod = 0.0;   // psi, at the UE, relative to the UE boresight
    double aoa = 0.0;   // phi, at the BS, relative to the BS boresight
    double toa = 0.0;   // tau, seconds
    cplx gain;          // beta
    double length = 0.0;
    int bounces = 0;
    int wall = -1;      // reflecting wall index, -1 for the direct path
    Vec3 reflection_point = Vec3::Zero();
};

struct PathSet {
    std::vector<Path> paths;  // sorted by ascending toa
    bool los = false;

    int n_paths() const { return static_cast<int>(paths.size()); }
    bool connected() const { return !paths.empty(); }
};

namespace detail {

inline double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

// Parameter t along p->q where it crosses segment a->b, if the two
// horizontal segments intersect (endpoints of p->q within `end_tol` of
// their ends are ignored so legs touching a reflection point do not
// self-intersect).
inline std::optional<double> segment_hit(const Vec2& p, const Vec2& q, const Vec2& a, const Vec2& b,
                                         double end_tol = 1e-9)
{
    const Vec2 r = q - p;
    const Vec2 s = b - a;
    const double denom = cross2(r, s);
    if (std::abs(denom) < 1e-15)
        return std::nullopt;  // parallel: grazing contact does not occlude
    const Vec2 ap = a - p;
    const double t = cross2(ap, s) / denom;
    const double u = cross2(ap, r) / denom;
    if (t <= end_tol || t >= 1.0 - end_tol || u < 0.0 || u > 1.0)
        return std::nullopt;
    return t;
}

// True if the 3D leg from p to q passes through any wall other than `skip`.
// z along the leg is linear in horizontal distance.
inline bool leg_blocked(const std::vector<Wall>& walls, const Vec3& p, const Vec3& q, int skip)
{
    const Vec2 p2 = p.head<2>();
    const Vec2 q2 = q.head<2>();
    for (std::size_t w = 0; w < walls.size(); ++w) {
        if (static_cast<int>(w) == skip)
            continue;
        const auto t = segment_hit(p2, q2, walls[w].a, walls[w].b);
        if (!t)
            continue;
        const double z = p.z() + (*t) * (q.z() - p.z());
        if (z <= walls[w].height)
            return true;
    }
    return false;
}

inline double azimuth(const Vec2& from, const Vec2& to)
{
    const Vec2 d = to - from;
    return std::atan2(d.y(), d.x());
}

inline Path make_path(double length, int bounces, double gamma, double wavelength)
{
    Path p;
    p.length = length;
    p.bounces = bounces;
    p.toa = length / kSpeedOfLight;
    const double mag = wavelength / (4.0 * kPi * length) * std::pow(gamma, bounces);
    const double phase = wrap_angle(-2.0 * kPi * std::fmod(length / wavelength, 1.0));
    p.gain = std::polar(mag, phase);
    return p;
}

} // namespace detail

// Multipath between base station `bs_id` and a UE at `ue_pos`: the direct
// path (if unoccluded) plus one image-source reflection per wall, keeping
// the `max_paths` strongest. An empty PathSet means the link is disconnected.
inline PathSet compute_paths(const Scene& scene, int bs_id, const Vec3& ue_pos, int max_paths)
{
    if (max_paths < 1)
        throw ConfigError("compute_paths: max_paths must be >= 1");
    if (!scene.bounds.contains(ue_pos))
        throw ConfigError("compute_paths: UE position outside scene bounds");
    const BaseStation& bs = scene.bs(bs_id);
    const double lambda = scene.wavelength();
    const Vec2 bs2 = bs.position.head<2>();
    const Vec2 ue2 = ue_pos.head<2>();
    const double dz = ue_pos.z() - bs.position.z();

    std::vector<Path> candidates;
    PathSet out;

    if (!detail::leg_blocked(scene.walls, bs.position, ue_pos, -1)) {
        Path p = detail::make_path((ue_pos - bs.position).norm(), 0, 1.0, lambda);
        p.aoa = wrap_angle(detail::azimuth(bs2, ue2) - bs.boresight);
        p.aod = wrap_angle(detail::azimuth(ue2, bs2) - scene.ue_boresight);
        candidates.push_back(p);
        out.los = true;
    }

    for (std::size_t w = 0; w < scene.walls.size(); ++w) {
        const Wall& wall = scene.walls[w];
        const Vec2 dir = wall.b - wall.a;
        const double len = dir.norm();
        if (len <= 0.0)
            continue;
        const Vec2 n(-dir.y() / len, dir.x() / len);
        const double sb = (bs2 - wall.a).dot(n);
        const double su = (ue2 - wall.a).dot(n);
        if (sb * su <= 0.0 || std::abs(sb) < 1e-9 || std::abs(su) < 1e-9)
            continue;  // specular reflection needs both ends strictly on one side
        const Vec2 image = bs2 - 2.0 * sb * n;
        // Reflection point: where ue -> image crosses the wall line.
        const double t = su / (su + sb);  // from ue toward image
        const Vec2 r2 = ue2 + t * (image - ue2);
        const double along = (r2 - wall.a).dot(dir) / (len * len);
        if (along < 0.0 || along > 1.0)
            continue;
        const double horiz = (image - ue2).norm();
        const double d_bs = (r2 - bs2).norm();
        const double zr = bs.position.z() + dz * (d_bs / horiz);
        if (zr > wall.height)
            continue;  // ray passes over the wall
        const Vec3 r3(r2.x(), r2.y(), zr);
        if (detail::leg_blocked(scene.walls, bs.position, r3, static_cast<int>(w)) ||
            detail::leg_blocked(scene.walls, r3, ue_pos, static_cast<int>(w)))
            continue;
        const double length = std::sqrt(horiz * horiz + dz * dz);
        Path p = detail::make_path(length, 1, wall.gamma, lambda);
        p.aoa = wrap_angle(detail::azimuth(bs2, r2) - bs.boresight);
        p.aod = wrap_angle(detail::azimuth(ue2, r2) - scene.ue_boresight);
        p.wall = static_cast<int>(w);
        p.reflection_point = r3;
        candidates.push_back(p);
    }

    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Path& a, const Path& b) { return std::abs(a.gain) > std::abs(b.gain); });
    if (static_cast<int>(candidates.size()) > max_paths)
        candidates.resize(max_paths);
    std::stable_sort(candidates.begin(), candidates.end(),
                     [](const Path& a, const Path& b) { return a.toa < b.toa; });
    out.paths = std::move(candidates);
    if (out.los && (out.paths.empty() || out.paths.front().bounces != 0))
        out.los = false;
    return out;
}

// Per-path rank-1 channel matrices H_l = beta_l a_r(phi_l) a_t(psi_l)^H (M x N).
inline std::vector<array::CMatrix> synthesize_channel(const PathSet& paths, const ArrayConfig& bs_array,
                                                      const ArrayConfig& ue_array)
{
    if (!paths.connected())
        throw ConfigError("synthesize_channel: empty path set");
    std::vector<array::CMatrix> out;
    out.reserve(paths.paths.size());
    for (const Path& p : paths.paths) {
        const array::CVector ar = array::steering_vector(bs_array, p.aoa);
        const array::CVector at = array::steering_vector(ue_array, p.aod);
        out.push_back(p.gain * ar * at.adjoint());
    }
    return out;
}

// Two perpendicular streets crossing at the origin, lined by building
// facades and closed at the far ends. BSs sit near the crossing
// (los_dominant) or at the end of each street arm (nlos_dominant).
inline Scene build_scene(const SceneConfig& cfg)
{
    cfg.validate();
    const double h = cfg.street_length / 2.0;
    const double w = cfg.street_width / 2.0;
    const double lambda = kSpeedOfLight / cfg.carrier_frequency;
    const double bs_z = cfg.effective_bs_height();

    Scene s;
    s.mode = cfg.mode;
    s.rng_seed = cfg.seed;
    s.bounds.lo = Vec3(-h, -h, 0.0);
    s.bounds.hi = Vec3(h, h, cfg.wall_height);
    s.ue_height_min = cfg.ue_height_min;
    s.ue_height_max = cfg.ue_height_max;
    s.ue_array = ArrayConfig{cfg.ue_elements, cfg.spacing_ratio, lambda};
    s.ue_boresight = 0.0;

    auto facade = [&](Vec2 a, Vec2 b) { s.walls.push_back(Wall{a, b, cfg.wall_height, cfg.wall_gamma}); };
    for (double sx : {-1.0, 1.0}) {
        for (double sy : {-1.0, 1.0}) {
            facade(Vec2(sx * w, sy * w), Vec2(sx * h, sy * w));  // along the x street
            facade(Vec2(sx * w, sy * w), Vec2(sx * w, sy * h));  // along the y street
        }
    }
    facade(Vec2(-h, -w), Vec2(-h, w));
    facade(Vec2(h, -w), Vec2(h, w));
    facade(Vec2(-w, -h), Vec2(w, -h));
    facade(Vec2(-w, h), Vec2(w, h));

    const double margin = 1.0;
    s.walkable.push_back(Rect2{Vec2(-h + margin, -w + margin), Vec2(h - margin, w - margin)});
    s.walkable.push_back(Rect2{Vec2(-w + margin, w - margin), Vec2(w - margin, h - margin)});
    s.walkable.push_back(Rect2{Vec2(-w + margin, -h + margin), Vec2(w - margin, -w + margin)});

    const ArrayConfig bs_array{cfg.bs_elements, cfg.spacing_ratio, lambda};
    if (cfg.mode == BsMode::los_dominant) {
        // One mast at each corner of the crossing, broadside toward the
        // opposite corner.
        const double c = w - 2.0;
        const std::array<Vec2, 4> pos{Vec2(c, c), Vec2(-c, c), Vec2(-c, -c), Vec2(c, -c)};
        for (int i = 0; i < 4; ++i)
            s.base_stations.push_back(
                BaseStation{i, Vec3(pos[i].x(), pos[i].y(), bs_z), bs_array, std::atan2(-pos[i].y(), -pos[i].x())});
    } else {
        const double e = h - 3.0;
        const double off = w / 2.0;
        const std::array<Vec2, 4> pos{Vec2(e, off), Vec2(-off, e), Vec2(-e, -off), Vec2(off, -e)};
        const std::array<double, 4> look{kPi, -kPi / 2.0, 0.0, kPi / 2.0};
        for (int i = 0; i < 4; ++i)
            s.base_stations.push_back(BaseStation{i, Vec3(pos[i].x(), pos[i].y(), bs_z), bs_array, look[i]});
    }

    Rng rng(derive_seed(cfg.seed, {0x5ce7e}));
    const double total_area = [&] {
        double a = 0.0;
        for (const auto& r : s.walkable)
            a += r.area();
        return a;
    }();
    int placed = 0;
    int attempts = 0;
    while (placed < cfg.n_obstacles) {
        if (++attempts > 1000 * (cfg.n_obstacles + 1))
            throw ConfigError("scene: could not place obstacles");
        double pick = uniform(rng, 0.0, total_area);
        const Rect2* rect = &s.walkable.back();
        for (const auto& r : s.walkable) {
            if (pick < r.area()) {
                rect = &r;
                break;
            }
            pick -= r.area();
        }
        const Vec2 c(uniform(rng, rect->lo.x(), rect->hi.x()), uniform(rng, rect->lo.y(), rect->hi.y()));
        const double len = uniform(rng, cfg.obstacle_length_min, cfg.obstacle_length_max);
        const double theta = uniform(rng, 0.0, kPi);
        const Vec2 half = 0.5 * len * Vec2(std::cos(theta), std::sin(theta));
        const Vec2 a = c - half;
        const Vec2 b = c + half;
        bool ok = false;
        for (const auto& r : s.walkable)
            ok = ok || (r.contains(a) && r.contains(b));
        for (const auto& bs : s.base_stations) {
            const Vec2 p = bs.position.head<2>();
            const double t = std::clamp((p - a).dot(b - a) / (len * len), 0.0, 1.0);
            ok = ok && (p - (a + t * (b - a))).norm() > 10.0;
        }
        if (!ok)
            continue;
        s.walls.push_back(Wall{a, b, cfg.obstacle_height, cfg.obstacle_gamma});
        ++placed;
    }
    s.bounds.hi.z() = std::max(cfg.wall_height, bs_z);
    return s;
}

// Uniform position over the walkable area at a uniform UE height.
inline Vec3 sample_ue_position(const Scene& scene, Rng& rng)
{
    double total = 0.0;
    for (const auto& r : scene.walkable)
        total += r.area();
    double pick = uniform(rng, 0.0, total);
    const Rect2* rect = &scene.walkable.back();
    for (const auto& r : scene.walkable) {
        if (pick < r.area()) {
            rect = &r;
            break;
        }
        pick -= r.area();
    }
    return Vec3(uniform(rng, rect->lo.x(), rect->hi.x()), uniform(rng, rect->lo.y(), rect->hi.y()),
                uniform(rng, scene.ue_height_min, scene.ue_height_max));
}

// ---- JSON -----------------------------------------------------------------

inline nlohmann::json vec_json(const Eigen::VectorXd& v)
{
    return nlohmann::json(std::vector<double>(v.data(), v.data() + v.size()));
}

inline nlohmann::json to_json(const ArrayConfig& a)
{
    return {{"n_elements", a.n_elements}, {"spacing_ratio", a.spacing_ratio}, {"wavelength", a.wavelength}};
}

inline ArrayConfig array_from_json(const nlohmann::json& j)
{
    ArrayConfig a{j.at("n_elements").get<int>(), j.at("spacing_ratio").get<double>(), j.at("wavelength").get<double>()};
    a.validate();
    return a;
}

inline nlohmann::json to_json(const Scene& s)
{
    nlohmann::json j;
    j["format"] = "ccloc.scene";
    j["format_version"] = 1;
    j["mode"] = to_string(s.mode);
    j["rng_seed"] = s.rng_seed;
    j["bounds"] = {{"lo", vec_json(s.bounds.lo)}, {"hi", vec_json(s.bounds.hi)}};
    auto& walls = j["walls"] = nlohmann::json::array();
    for (const auto& w : s.walls)
        walls.push_back({{"a", vec_json(w.a)}, {"b", vec_json(w.b)}, {"height", w.height}, {"gamma", w.gamma}});
    auto& bss = j["base_stations"] = nlohmann::json::array();
    for (const auto& b : s.base_stations)
        bss.push_back({{"id", b.id}, {"position", vec_json(b.position)}, {"array", to_json(b.array)},
                       {"boresight", b.boresight}});
    auto& wk = j["walkable"] = nlohmann::json::array();
    for (const auto& r : s.walkable)
        wk.push_back({{"lo", vec_json(r.lo)}, {"hi", vec_json(r.hi)}});
    j["ue"] = {{"height_min", s.ue_height_min}, {"height_max", s.ue_height_max}, {"array", to_json(s.ue_array)},
               {"boresight", s.ue_boresight}};
    return j;
}

inline Scene scene_from_json(const nlohmann::json& j)
{
    try {
        if (j.at("format").get<std::string>() != "ccloc.scene" || j.at("format_version").get<int>() != 1)
            throw ParseError("scene: unsupported format or version");
        auto v2 = [](const nlohmann::json& a) {
            const auto v = a.get<std::vector<double>>();
            if (v.size() != 2)
                throw ParseError("scene: expected a 2-vector");
            return Vec2(v[0], v[1]);
        };
        auto v3 = [](const nlohmann::json& a) {
            const auto v = a.get<std::vector<double>>();
            if (v.size() != 3)
                throw ParseError("scene: expected a 3-vector");
            return Vec3(v[0], v[1], v[2]);
        };
        Scene s;
        s.mode = parse_bs_mode(j.at("mode").get<std::string>());
        s.rng_seed = j.at("rng_seed").get<std::uint64_t>();
        s.bounds.lo = v3(j.at("bounds").at("lo"));
        s.bounds.hi = v3(j.at("bounds").at("hi"));
        for (const auto& w : j.at("walls"))
            s.walls.push_back(Wall{v2(w.at("a")), v2(w.at("b")), w.at("height").get<double>(), w.at("gamma").get<double>()});
        for (const auto& b : j.at("base_stations"))
            s.base_stations.push_back(BaseStation{b.at("id").get<int>(), v3(b.at("position")), array_from_json(b.at("array")),
                                                  b.at("boresight").get<double>()});
        for (const auto& r : j.at("walkable"))
            s.walkable.push_back(Rect2{v2(r.at("lo")), v2(r.at("hi"))});
        const auto& ue = j.at("ue");
        s.ue_height_min = ue.at("height_min").get<double>();
        s.ue_height_max = ue.at("height_max").get<double>();
        s.ue_array = array_from_json(ue.at("array"));
        s.ue_boresight = ue.at("boresight").get<double>();
        if (s.base_stations.empty())
            throw ParseError("scene: no base stations");
        for (const auto& b : s.base_stations)
            if (!s.bounds.contains(b.position))
                throw ParseError("scene: base station " + std::to_string(b.id) + " outside bounds");
        return s;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("scene: ") + e.what());
    }
}

// FNV-1a over the canonical JSON text.
inline std::uint64_t fnv1a(const std::string& text)
{
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v)
{
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i, v >>= 4)
        out[i] = digits[v & 0xf];
    return out;
}

inline std::string scene_hash(const Scene& s) { return hex64(fnv1a(to_json(s).dump())); }

} // namespace ccloc::scene

#endif // CCLOC_SCENE_HPP

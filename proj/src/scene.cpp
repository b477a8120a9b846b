#include "rose/scene.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <map>

#include "rose/common.hpp"

namespace rose::synth {

namespace {

enum class ShapeKind { Circle, Square, Triangle, Cross, Ring };

ShapeKind shape_kind(const std::string& name) {
    if (name == "circle") return ShapeKind::Circle;
    if (name == "square") return ShapeKind::Square;
    if (name == "triangle") return ShapeKind::Triangle;
    if (name == "cross") return ShapeKind::Cross;
    if (name == "ring") return ShapeKind::Ring;
    throw ConfigError("unsupported thing category: " + name);
}

struct NamedColor {
    const char* name;
    float r, g, b;
};

// Thing palette. Saturated hues, kept apart from the pastel stuff bands.
constexpr std::array<NamedColor, 6> kPalette = {{
    {"red", 0.88f, 0.10f, 0.10f},
    {"green", 0.10f, 0.72f, 0.18f},
    {"blue", 0.12f, 0.25f, 0.90f},
    {"yellow", 0.95f, 0.85f, 0.10f},
    {"purple", 0.60f, 0.12f, 0.78f},
    {"orange", 0.96f, 0.55f, 0.08f},
}};

// Pastel bases for stuff bands, cycled by band index.
constexpr std::array<std::array<float, 3>, 4> kBandBases = {{
    {0.62f, 0.80f, 0.97f},  // sky-ish
    {0.55f, 0.42f, 0.28f},  // ground-ish
    {0.75f, 0.75f, 0.78f},  // haze
    {0.35f, 0.50f, 0.45f},  // moss
}};

void rasterize(ShapeKind kind, int side, int cr, int cc, int s, Mask& out) {
    auto put = [&](int r, int c) {
        if (r >= 0 && r < side && c >= 0 && c < side) out.at(r, c) = 1;
    };
    switch (kind) {
        case ShapeKind::Circle:
            for (int dr = -s; dr <= s; ++dr)
                for (int dc = -s; dc <= s; ++dc)
                    if (dr * dr + dc * dc <= s * s) put(cr + dr, cc + dc);
            break;
        case ShapeKind::Square:
            for (int dr = -s; dr <= s; ++dr)
                for (int dc = -s; dc <= s; ++dc) put(cr + dr, cc + dc);
            break;
        case ShapeKind::Triangle:
            for (int dr = -s; dr <= s; ++dr) {
                int hw = static_cast<int>(std::lround(static_cast<double>(dr + s) / (2 * s) * s));
                for (int dc = -hw; dc <= hw; ++dc) put(cr + dr, cc + dc);
            }
            break;
        case ShapeKind::Cross: {
            int arm = std::max(1, s / 3);
            for (int dr = -s; dr <= s; ++dr)
                for (int dc = -s; dc <= s; ++dc)
                    if (std::abs(dr) <= arm || std::abs(dc) <= arm) put(cr + dr, cc + dc);
            break;
        }
        case ShapeKind::Ring: {
            int inner = std::max(1, s / 2);
            for (int dr = -s; dr <= s; ++dr)
                for (int dc = -s; dc <= s; ++dc) {
                    int d2 = dr * dr + dc * dc;
                    if (d2 <= s * s && d2 > inner * inner) put(cr + dr, cc + dc);
                }
            break;
        }
    }
}

int64_t shape_area(ShapeKind kind, int s) {
    static std::map<std::pair<int, int>, int64_t> cache;
    auto key = std::make_pair(static_cast<int>(kind), s);
    if (auto it = cache.find(key); it != cache.end()) return it->second;
    int side = 4 * s + 4;
    Mask m(side, side);
    rasterize(kind, side, side / 2, side / 2, s, m);
    return cache[key] = m.popcount();
}

// Smallest s whose rasterized area lands inside the class band, found by
// scanning upward; areas are monotone in s for all supported shapes.
int size_for_area(ShapeKind kind, int64_t area_lo, int64_t area_hi) {
    for (int s = 2; s <= 40; ++s) {
        int64_t a = shape_area(kind, s);
        if (a >= area_lo && a <= area_hi) return s;
        if (a > area_hi) return std::max(2, s - 1);
    }
    return 40;
}

struct PlacedThing {
    int category_id;
    std::string category_name;
    int color_index;
    Mask mask;
};

}  // namespace

std::vector<std::string> GeneratorConfig::all_categories() const {
    std::vector<std::string> out = thing_categories;
    out.insert(out.end(), stuff_categories.begin(), stuff_categories.end());
    return out;
}

int GeneratorConfig::category_id(const std::string& name) const {
    auto cats = all_categories();
    for (size_t i = 0; i < cats.size(); ++i)
        if (cats[i] == name) return static_cast<int>(i);
    return -1;
}

std::string build_counting_sentence(const std::vector<grid::Target>& targets,
                                    const GeneratorConfig& config) {
    std::map<int, int> counts;  // category id -> count, things only
    for (const auto& t : targets)
        if (t.is_thing) counts[t.category_id]++;
    if (counts.empty()) return "There is nothing in this image.";
    auto cats = config.all_categories();
    std::string out = "There are ";
    bool first = true;
    for (auto& [cid, n] : counts) {
        if (!first) out += ", ";
        out += std::to_string(n) + " " + cats[cid];
        first = false;
    }
    out += " in this image.";
    return out;
}

Scene generate_scene(const GeneratorConfig& config, uint64_t seed) {
    if (config.thing_categories.size() < 3)
        throw ConfigError("generate_scene: need at least 3 thing categories");
    if (config.stuff_categories.size() < 2)
        throw ConfigError("generate_scene: need at least 2 stuff categories");
    for (const auto& name : config.thing_categories) shape_kind(name);  // validate

    const int side = config.image_side;
    Rng rng(derive_seed(seed, 0xa11ce));

    Scene scene;
    scene.seed = seed;
    scene.side = side;

    // --- stuff bands ---
    const int n_bands = static_cast<int>(config.stuff_categories.size());
    std::vector<int> horizons;  // band i spans [horizons[i], horizons[i+1])
    horizons.push_back(0);
    {
        int lo = static_cast<int>(0.2 * side), hi = static_cast<int>(0.8 * side);
        std::vector<int> cuts;
        int min_gap = 8;
        for (int i = 0; i + 1 < n_bands; ++i) {
            for (int attempt = 0; attempt < 64; ++attempt) {
                int h = static_cast<int>(rng.uniform_int(lo, hi));
                bool ok = true;
                for (int c : cuts)
                    if (std::abs(c - h) < min_gap) ok = false;
                if (ok) {
                    cuts.push_back(h);
                    break;
                }
            }
        }
        while (static_cast<int>(cuts.size()) < n_bands - 1)
            cuts.push_back(lo + min_gap * (static_cast<int>(cuts.size()) + 1));
        std::sort(cuts.begin(), cuts.end());
        for (int c : cuts) horizons.push_back(c);
    }
    horizons.push_back(side);

    // --- things: distinct (color, shape) pairs, non-overlapping placement ---
    int want = static_cast<int>(rng.uniform_int(config.min_things, config.max_things));
    std::vector<std::pair<int, int>> combos;  // (color index, thing category index)
    for (size_t c = 0; c < kPalette.size(); ++c)
        for (size_t t = 0; t < config.thing_categories.size(); ++t)
            combos.emplace_back(static_cast<int>(c), static_cast<int>(t));
    rng.shuffle(combos);

    // Area bands for the three roles, as fractions of the image area.
    const double image_area = static_cast<double>(side) * side;
    const int64_t small_hi = static_cast<int64_t>(0.02 * image_area) - 1;
    const int64_t medium_hi = static_cast<int64_t>(0.10 * image_area) - 1;
    const int64_t large_hi = static_cast<int64_t>(0.22 * image_area);

    std::vector<PlacedThing> things;
    Mask occupied(side, side);
    for (int i = 0; i < want && i < static_cast<int>(combos.size()); ++i) {
        auto [color_idx, cat_idx] = combos[i];
        const std::string& name = config.thing_categories[cat_idx];
        ShapeKind kind = shape_kind(name);

        // When three or more things fit, force one of each size class first.
        int size_class;
        if (want >= 3 && i < 3)
            size_class = i;
        else
            size_class = static_cast<int>(rng.uniform_int(0, 2));
        int64_t lo = size_class == 0 ? 24 : (size_class == 1 ? small_hi + 1 : medium_hi + 1);
        int64_t hi = size_class == 0 ? small_hi : (size_class == 1 ? medium_hi : large_hi);
        int64_t area_goal = rng.uniform_int(lo, hi);
        int s = size_for_area(kind, (lo + area_goal) / 2, hi);

        bool placed = false;
        for (int attempt = 0; attempt < 40 && !placed; ++attempt) {
            int margin = s + 1;
            if (2 * margin >= side) break;
            int cr = static_cast<int>(rng.uniform_int(margin, side - 1 - margin));
            int cc = static_cast<int>(rng.uniform_int(margin, side - 1 - margin));
            Mask m(side, side);
            rasterize(kind, side, cr, cc, s, m);
            bool overlap = false;
            for (size_t px = 0; px < m.data.size() && !overlap; ++px)
                if (m.data[px] && occupied.data[px]) overlap = true;
            if (overlap) continue;
            for (size_t px = 0; px < m.data.size(); ++px)
                if (m.data[px]) occupied.data[px] = 1;
            things.push_back(PlacedThing{config.category_id(name), name, color_idx, std::move(m)});
            placed = true;
        }
    }

    // --- compose image ---
    scene.image.resize(static_cast<Eigen::Index>(side) * side, 3);
    std::vector<std::array<float, 3>> band_colors(n_bands);
    for (int b = 0; b < n_bands; ++b) {
        auto base = kBandBases[b % kBandBases.size()];
        for (int ch = 0; ch < 3; ++ch)
            band_colors[b][ch] =
                std::clamp(base[ch] + static_cast<float>(rng.uniform(-0.05, 0.05)), 0.0f, 1.0f);
    }
    for (int r = 0; r < side; ++r) {
        int band = 0;
        while (band + 1 < n_bands && r >= horizons[band + 1]) ++band;
        for (int c = 0; c < side; ++c) {
            Eigen::Index px = static_cast<Eigen::Index>(r) * side + c;
            for (int ch = 0; ch < 3; ++ch) scene.image(px, ch) = band_colors[band][ch];
        }
    }
    for (const auto& th : things) {
        const NamedColor& col = kPalette[th.color_index];
        for (int px = 0; px < side * side; ++px)
            if (th.mask.data[px]) {
                scene.image(px, 0) = col.r;
                scene.image(px, 1) = col.g;
                scene.image(px, 2) = col.b;
            }
    }
    if (config.pixel_noise > 0) {
        for (Eigen::Index px = 0; px < scene.image.rows(); ++px)
            for (int ch = 0; ch < 3; ++ch)
                scene.image(px, ch) = std::clamp(
                    scene.image(px, ch) +
                        static_cast<float>(rng.uniform(-config.pixel_noise, config.pixel_noise)),
                    0.0f, 1.0f);
    }

    // --- targets: things then stuff (stuff masks exclude thing pixels) ---
    for (auto& th : things)
        scene.targets.push_back(grid::make_target(th.mask, th.category_id, th.category_name, true));
    for (int b = 0; b < n_bands; ++b) {
        Mask m(side, side);
        for (int r = horizons[b]; r < horizons[b + 1]; ++r)
            for (int c = 0; c < side; ++c)
                if (!occupied.at(r, c)) m.at(r, c) = 1;
        if (m.popcount() == 0) continue;  // fully hidden band
        scene.targets.push_back(grid::make_target(
            std::move(m), config.category_id(config.stuff_categories[b]),
            config.stuff_categories[b], false));
    }

    // --- referring phrases, unique by distinct (color, shape) ---
    for (size_t i = 0; i < things.size(); ++i) {
        const auto& th = things[i];
        const auto& t = scene.targets[i];
        std::string pos = t.center_col < side / 2 ? "left" : "right";
        std::string phrase =
            std::string("the ") + kPalette[th.color_index].name + " " + th.category_name +
            " on the " + pos;
        scene.referring.emplace_back(phrase, static_cast<int>(i));
    }

    scene.counting_sentence = build_counting_sentence(scene.targets, config);
    return scene;
}

std::vector<std::string> palette_color_names() {
    std::vector<std::string> names;
    for (const auto& c : kPalette) names.emplace_back(c.name);
    return names;
}

std::vector<int> semantic_label_map(const Scene& scene) {
    std::vector<int> labels(static_cast<size_t>(scene.side) * scene.side, -1);
    for (const auto& t : scene.targets)
        for (size_t px = 0; px < t.mask.data.size(); ++px)
            if (t.mask.data[px]) labels[px] = t.category_id;
    return labels;
}

Mask corrupt_mask(const Mask& m, const CorruptionRecipe& recipe) {
    if (m.popcount() == 0) throw std::invalid_argument("corrupt_mask: empty input");
    if (recipe.magnitude <= 0.0 || recipe.magnitude > 1.0)
        throw std::invalid_argument("corrupt_mask: magnitude must be in (0, 1]");

    Rng rng(derive_seed(recipe.seed, 0xc0de));

    std::vector<int> fg;
    for (int px = 0; px < m.h * m.w; ++px)
        if (m.data[px]) fg.push_back(px);

    auto attempt = [&](double mag) -> Mask {
        Mask out = m;
        if (recipe.mode == CorruptionMode::HolesPatches) {
            int k = std::max<int>(1, static_cast<int>(std::llround(mag * 4)));
            int base_r = std::max<int>(
                1, static_cast<int>(std::llround(mag * std::sqrt(static_cast<double>(m.popcount())) * 0.5)));
            for (int i = 0; i < k; ++i) {  // holes
                int px = fg[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(fg.size()) - 1))];
                int r = std::max(1, static_cast<int>(std::llround(base_r * rng.uniform(0.6, 1.3))));
                int cr = px / m.w, cc = px % m.w;
                for (int dr = -r; dr <= r; ++dr)
                    for (int dc = -r; dc <= r; ++dc)
                        if (dr * dr + dc * dc <= r * r) {
                            int rr = cr + dr, ccx = cc + dc;
                            if (rr >= 0 && rr < m.h && ccx >= 0 && ccx < m.w) out.at(rr, ccx) = 0;
                        }
            }
            Mask band = mask_dilate(m, base_r + 3);
            std::vector<int> ring;
            for (int px = 0; px < m.h * m.w; ++px)
                if (band.data[px] && !m.data[px]) ring.push_back(px);
            for (int i = 0; i < k && !ring.empty(); ++i) {  // extra patches
                int px = ring[static_cast<size_t>(rng.uniform_int(0, static_cast<int64_t>(ring.size()) - 1))];
                int r = std::max(1, static_cast<int>(std::llround(base_r * rng.uniform(0.6, 1.3))));
                int cr = px / m.w, cc = px % m.w;
                for (int dr = -r; dr <= r; ++dr)
                    for (int dc = -r; dc <= r; ++dc)
                        if (dr * dr + dc * dc <= r * r) {
                            int rr = cr + dr, ccx = cc + dc;
                            if (rr >= 0 && rr < m.h && ccx >= 0 && ccx < m.w) out.at(rr, ccx) = 1;
                        }
            }
        } else {  // ShrinkStretch
            int r = std::max<int>(1, static_cast<int>(std::llround(mag * 4)));
            bool shrink = rng.coin();
            Mask morphed = shrink ? mask_erode(m, r) : mask_dilate(m, r);
            if (morphed == m) morphed = shrink ? mask_dilate(m, r) : mask_erode(m, r);
            // keep parts of the variation
            out = m;
            for (int px = 0; px < m.h * m.w; ++px)
                if (morphed.data[px] != m.data[px] && rng.coin()) out.data[px] = morphed.data[px];
        }
        return out;
    };

    // Minimal visible edit of the input, used when an attempt lands back on
    // the input or wipes it entirely.
    auto nudged = [&](Mask out) {
        if (fg.size() > 1) {
            out.data[fg[fg.size() / 2]] = 0;
        } else if (fg[0] + 1 < m.h * m.w) {
            out.data[fg[0] + 1] = 1;
        } else if (fg[0] > 0) {
            out.data[fg[0] - 1] = 1;
        }
        return out;
    };

    double mag = recipe.magnitude;
    for (int tries = 0; tries < 4; ++tries) {
        Mask out = attempt(mag);
        if (out.popcount() == 0) {  // too destructive, retry gentler
            mag *= 0.5;
            continue;
        }
        if (out == m) out = nudged(std::move(out));
        return out;
    }
    return nudged(m);
}

}  // namespace rose::synth

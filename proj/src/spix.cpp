#include "biospix/spix.hpp"

#include <unordered_map>
#include <vector>

namespace biospix {

namespace {

struct Components {
    std::vector<int> comp;                       // per pixel
    std::vector<int> label;                      // per component
    std::vector<std::vector<std::int64_t>> pix;  // per component, pixel indices
};

// 4-connected components in row-major discovery order (component 0 anchors
// at the first pixel, and anchors are lexicographically ordered).
Components label_components(const LabelMap& m) {
    const int h = m.h, w = m.w;
    Components cc;
    cc.comp.assign(static_cast<std::size_t>(h) * w, -1);
    std::vector<std::int64_t> stack;
    for (std::int64_t start = 0; start < m.size(); ++start) {
        if (cc.comp[static_cast<std::size_t>(start)] >= 0) continue;
        const int id = static_cast<int>(cc.label.size());
        const int lab = m.v[static_cast<std::size_t>(start)];
        cc.label.push_back(lab);
        cc.pix.emplace_back();
        stack.assign(1, start);
        cc.comp[static_cast<std::size_t>(start)] = id;
        while (!stack.empty()) {
            const std::int64_t p = stack.back();
            stack.pop_back();
            cc.pix[static_cast<std::size_t>(id)].push_back(p);
            const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
            const int dy[4] = {-1, 0, 0, 1}, dx[4] = {0, -1, 1, 0};
            for (int d = 0; d < 4; ++d) {
                const int ny = y + dy[d], nx = x + dx[d];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const std::int64_t np = static_cast<std::int64_t>(ny) * w + nx;
                if (cc.comp[static_cast<std::size_t>(np)] >= 0 || m.v[static_cast<std::size_t>(np)] != lab)
                    continue;
                cc.comp[static_cast<std::size_t>(np)] = id;
                stack.push_back(np);
            }
        }
    }
    return cc;
}

}  // namespace

SuperpixelMap enforce_connectivity(const LabelMap& m, int min_size) {
    if (m.empty()) return SuperpixelMap{};
    const int h = m.h, w = m.w;
    Components cc = label_components(m);
    const int nc = static_cast<int>(cc.label.size());

    // the largest component of each label; earlier anchor wins ties
    std::unordered_map<int, int> best;
    for (int i = 0; i < nc; ++i) {
        auto it = best.find(cc.label[static_cast<std::size_t>(i)]);
        if (it == best.end() ||
            cc.pix[static_cast<std::size_t>(i)].size() > cc.pix[static_cast<std::size_t>(it->second)].size())
            best[cc.label[static_cast<std::size_t>(i)]] = i;
    }

    std::vector<char> resolved(static_cast<std::size_t>(nc), 0);
    std::vector<int> target(static_cast<std::size_t>(nc));
    for (int i = 0; i < nc; ++i) {
        target[static_cast<std::size_t>(i)] = i;
        resolved[static_cast<std::size_t>(i)] =
            best[cc.label[static_cast<std::size_t>(i)]] == i &&
            static_cast<std::int64_t>(cc.pix[static_cast<std::size_t>(i)].size()) >= min_size;
    }

    // absorb failing components, in anchor order, into the resolved region
    // they touch most; a component with no resolved neighbor survives as-is
    std::unordered_map<int, std::int64_t> counts;
    for (int i = 0; i < nc; ++i) {
        if (resolved[static_cast<std::size_t>(i)]) continue;
        counts.clear();
        for (std::int64_t p : cc.pix[static_cast<std::size_t>(i)]) {
            const int y = static_cast<int>(p / w), x = static_cast<int>(p % w);
            const int dy[4] = {-1, 0, 0, 1}, dx[4] = {0, -1, 1, 0};
            for (int d = 0; d < 4; ++d) {
                const int ny = y + dy[d], nx = x + dx[d];
                if (ny < 0 || ny >= h || nx < 0 || nx >= w) continue;
                const int j = cc.comp[static_cast<std::size_t>(static_cast<std::int64_t>(ny) * w + nx)];
                if (j == i) continue;
                const int r = target[static_cast<std::size_t>(j)];
                if (resolved[static_cast<std::size_t>(r)] && target[static_cast<std::size_t>(r)] == r)
                    ++counts[r];
            }
        }
        int pick = -1;
        std::int64_t pick_n = 0;
        for (const auto& [r, cnt] : counts)
            if (cnt > pick_n || (cnt == pick_n && (pick < 0 || r < pick))) {
                pick = r;
                pick_n = cnt;
            }
        resolved[static_cast<std::size_t>(i)] = 1;
        if (pick >= 0) target[static_cast<std::size_t>(i)] = pick;
    }

    SuperpixelMap out(h, w);
    std::vector<int> dense(static_cast<std::size_t>(nc), -1);
    int next = 0;
    for (std::int64_t p = 0; p < m.size(); ++p) {
        const int r = target[static_cast<std::size_t>(cc.comp[static_cast<std::size_t>(p)])];
        if (dense[static_cast<std::size_t>(r)] < 0) dense[static_cast<std::size_t>(r)] = next++;
        out.v[static_cast<std::size_t>(p)] = dense[static_cast<std::size_t>(r)];
    }
    out.count = next;
    return out;
}

}  // namespace biospix

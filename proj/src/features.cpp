#include "transid/features.hpp"

#include "transid/errors.hpp"

#include "json.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>

namespace transid {

IntegralImage::IntegralImage(const TransmissionImage& img)
    : width_(img.width), height_(img.height),
      table_(static_cast<std::size_t>(img.width + 1) * static_cast<std::size_t>(img.height + 1), 0.0)
{
    const std::size_t stride = static_cast<std::size_t>(width_) + 1;
    for (int v = 0; v < height_; ++v) {
        double row = 0.0;
        for (int u = 0; u < width_; ++u) {
            row += img.at(u, v);
            table_[(v + 1) * stride + (u + 1)] = table_[v * stride + (u + 1)] + row;
        }
    }
}

double IntegralImage::box_sum(int u0, int v0, int u1, int v1) const
{
    u0 = std::clamp(u0, 0, width_);
    u1 = std::clamp(u1, 0, width_);
    v0 = std::clamp(v0, 0, height_);
    v1 = std::clamp(v1, 0, height_);
    if (u1 <= u0 || v1 <= v0)
        return 0.0;
    return at(u1, v1) - at(u0, v1) - at(u1, v0) + at(u0, v0);
}

IntegralImage integral_image(const TransmissionImage& img)
{
    return IntegralImage(img);
}

// ---------------------------------------------------------------------------
// Fast-Hessian detector

int hessian_filter_size(int octave, int interval)
{
    return 3 * ((1 << (octave + 1)) * (interval + 1) + 1);
}

namespace {

/// Sum over rows [row, row + rows) and columns [col, col + cols).
double box(const IntegralImage& ii, int row, int col, int rows, int cols)
{
    return ii.box_sum(col, row, col + cols, row + rows);
}

constexpr int kIntervals = 4;

struct ResponseMap {
    int width = 0;
    int height = 0;
    int step = 1;
    int filter = 9;
    std::vector<double> det;
    std::vector<signed char> valid;
    std::vector<signed char> sign;

    double at(int i, int j) const { return det[static_cast<std::size_t>(j) * width + i]; }
    bool ok(int i, int j) const { return valid[static_cast<std::size_t>(j) * width + i] != 0; }
};

ResponseMap build_response_map(const IntegralImage& ii, int step, int filter)
{
    ResponseMap m;
    m.step = step;
    m.filter = filter;
    m.width = (ii.width() + step - 1) / step;
    m.height = (ii.height() + step - 1) / step;
    const std::size_t n = static_cast<std::size_t>(m.width) * m.height;
    m.det.assign(n, 0.0);
    m.valid.assign(n, 0);
    m.sign.assign(n, 1);
    for (int j = 0; j < m.height; ++j)
        for (int i = 0; i < m.width; ++i) {
            const auto h = hessian_response(ii, i * step, j * step, filter);
            if (!h)
                continue;
            const std::size_t k = static_cast<std::size_t>(j) * m.width + i;
            m.det[k] = h->det;
            m.valid[k] = 1;
            m.sign[k] = h->trace >= 0.0 ? 1 : -1;
        }
    return m;
}

bool is_local_max(const ResponseMap& below, const ResponseMap& mid, const ResponseMap& above, int i, int j)
{
    const double value = mid.at(i, j);
    for (int dj = -1; dj <= 1; ++dj)
        for (int di = -1; di <= 1; ++di) {
            const int u = i + di;
            const int v = j + dj;
            if (!below.ok(u, v) || !mid.ok(u, v) || !above.ok(u, v))
                return false;
            if (below.at(u, v) >= value || above.at(u, v) >= value)
                return false;
            if ((di != 0 || dj != 0) && mid.at(u, v) >= value)
                return false;
        }
    return true;
}

/// Solves H x = b for a 3x3 system by Cramer's rule; false when singular.
bool solve3(const double h[3][3], const double b[3], double x[3])
{
    const double det = h[0][0] * (h[1][1] * h[2][2] - h[1][2] * h[2][1]) -
                       h[0][1] * (h[1][0] * h[2][2] - h[1][2] * h[2][0]) +
                       h[0][2] * (h[1][0] * h[2][1] - h[1][1] * h[2][0]);
    if (det == 0.0 || !std::isfinite(det))
        return false;
    for (int c = 0; c < 3; ++c) {
        double m[3][3];
        for (int r = 0; r < 3; ++r)
            for (int k = 0; k < 3; ++k)
                m[r][k] = (k == c) ? b[r] : h[r][k];
        x[c] = (m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])) /
               det;
    }
    return true;
}

std::optional<Keypoint> refine(const ResponseMap& b, const ResponseMap& m, const ResponseMap& t, int i, int j)
{
    const double v = m.at(i, j);
    const double grad[3] = {
        0.5 * (m.at(i + 1, j) - m.at(i - 1, j)),
        0.5 * (m.at(i, j + 1) - m.at(i, j - 1)),
        0.5 * (t.at(i, j) - b.at(i, j)),
    };
    const double dxx = m.at(i + 1, j) + m.at(i - 1, j) - 2.0 * v;
    const double dyy = m.at(i, j + 1) + m.at(i, j - 1) - 2.0 * v;
    const double dss = t.at(i, j) + b.at(i, j) - 2.0 * v;
    const double dxy = 0.25 * (m.at(i + 1, j + 1) - m.at(i - 1, j + 1) - m.at(i + 1, j - 1) + m.at(i - 1, j - 1));
    const double dxs = 0.25 * (t.at(i + 1, j) - t.at(i - 1, j) - b.at(i + 1, j) + b.at(i - 1, j));
    const double dys = 0.25 * (t.at(i, j + 1) - t.at(i, j - 1) - b.at(i, j + 1) + b.at(i, j - 1));
    const double hess[3][3] = {{dxx, dxy, dxs}, {dxy, dyy, dys}, {dxs, dys, dss}};
    const double rhs[3] = {-grad[0], -grad[1], -grad[2]};
    double off[3];
    if (!solve3(hess, rhs, off))
        return std::nullopt;
    if (std::abs(off[0]) >= 0.5 || std::abs(off[1]) >= 0.5 || std::abs(off[2]) >= 0.5)
        return std::nullopt;

    Keypoint kp;
    kp.x = (i + off[0]) * m.step;
    kp.y = (j + off[1]) * m.step;
    kp.scale = (1.2 / 9.0) * (m.filter + off[2] * (t.filter - m.filter));
    kp.response = v;
    kp.laplacian_sign = m.sign[static_cast<std::size_t>(j) * m.width + i];
    return kp;
}

} // namespace

std::optional<HessianSample> hessian_response(const IntegralImage& ii, int u, int v, int filter_size)
{
    const int L = filter_size;
    const int l = L / 3;
    const int b = (L - 1) / 2;
    if (u < b || v < b || u + b >= ii.width() || v + b >= ii.height())
        return std::nullopt;
    const int r = v;
    const int c = u;
    const double dxx = box(ii, r - l + 1, c - b, 2 * l - 1, L) - 3.0 * box(ii, r - l + 1, c - l / 2, 2 * l - 1, l);
    const double dyy = box(ii, r - b, c - l + 1, L, 2 * l - 1) - 3.0 * box(ii, r - l / 2, c - l + 1, l, 2 * l - 1);
    const double dxy = box(ii, r - l, c + 1, l, l) + box(ii, r + 1, c - l, l, l) - box(ii, r - l, c - l, l, l) -
                       box(ii, r + 1, c + 1, l, l);
    const double inv = 1.0 / (static_cast<double>(L) * L);
    const double nxx = dxx * inv;
    const double nyy = dyy * inv;
    const double nxy = dxy * inv;
    return HessianSample{nxx * nyy - 0.81 * nxy * nxy, nxx + nyy};
}

std::vector<Keypoint> detect_keypoints(const TransmissionImage& img, const DetectorParams& params)
{
    if (params.octaves < 1 || params.init_sample < 1)
        throw ValidationError("detector needs >= 1 octave and init_sample >= 1");
    const IntegralImage ii(img);

    std::vector<Keypoint> keypoints;
    for (int o = 0; o < params.octaves; ++o) {
        const int step = params.init_sample << o;
        if (hessian_filter_size(o, 0) > std::min(img.width, img.height))
            break;
        std::vector<ResponseMap> maps;
        maps.reserve(kIntervals);
        for (int k = 0; k < kIntervals; ++k)
            maps.push_back(build_response_map(ii, step, hessian_filter_size(o, k)));

        for (int k = 1; k + 1 < kIntervals; ++k) {
            const ResponseMap& mid = maps[k];
            for (int j = 1; j + 1 < mid.height; ++j)
                for (int i = 1; i + 1 < mid.width; ++i) {
                    if (!mid.ok(i, j) || mid.at(i, j) <= params.threshold)
                        continue;
                    if (!is_local_max(maps[k - 1], mid, maps[k + 1], i, j))
                        continue;
                    if (auto kp = refine(maps[k - 1], mid, maps[k + 1], i, j))
                        keypoints.push_back(*kp);
                }
        }
    }

    std::sort(keypoints.begin(), keypoints.end(), [](const Keypoint& a, const Keypoint& b) {
        if (a.response != b.response)
            return a.response > b.response;
        if (a.y != b.y)
            return a.y < b.y;
        if (a.x != b.x)
            return a.x < b.x;
        return a.scale < b.scale;
    });

    // Adjacent octaves share scales, so one extremum can be found twice. A
    // weaker keypoint within half a scale of a stronger one at a similar scale
    // is that same extremum and is dropped.
    std::vector<Keypoint> kept;
    kept.reserve(keypoints.size());
    for (const Keypoint& kp : keypoints) {
        const bool duplicate = std::any_of(kept.begin(), kept.end(), [&](const Keypoint& k) {
            const double lo = std::min(k.scale, kp.scale), hi = std::max(k.scale, kp.scale);
            return hi < 1.5 * lo && std::hypot(k.x - kp.x, k.y - kp.y) <= 0.5 * lo;
        });
        if (!duplicate)
            kept.push_back(kp);
    }
    return kept;
}

// ---------------------------------------------------------------------------
// Upright SURF descriptor

namespace {

double haar_x(const IntegralImage& ii, int row, int col, int s)
{
    const int h = s / 2;
    return box(ii, row - h, col, s, h) - box(ii, row - h, col - h, s, h);
}

double haar_y(const IntegralImage& ii, int row, int col, int s)
{
    const int h = s / 2;
    return box(ii, row, col - h, h, s) - box(ii, row - h, col - h, h, s);
}

std::optional<Descriptor> describe_one(const IntegralImage& ii, const Keypoint& kp)
{
    const double s = kp.scale;
    const int wavelet = std::max(2, static_cast<int>(std::lround(2.0 * s)));
    const double inv_two_sigma2 = 1.0 / (2.0 * (3.3 * s) * (3.3 * s));

    Descriptor d{};
    std::size_t slot = 0;
    for (int sy = 0; sy < 4; ++sy)
        for (int sx = 0; sx < 4; ++sx) {
            double sum_dx = 0.0, sum_adx = 0.0, sum_dy = 0.0, sum_ady = 0.0;
            for (int k = 0; k < 5; ++k)
                for (int l = 0; l < 5; ++l) {
                    const double ox = (-10.0 + 5.0 * sx + l + 0.5) * s;
                    const double oy = (-10.0 + 5.0 * sy + k + 0.5) * s;
                    const int col = static_cast<int>(std::lround(kp.x + ox));
                    const int row = static_cast<int>(std::lround(kp.y + oy));
                    const double g = std::exp(-(ox * ox + oy * oy) * inv_two_sigma2);
                    const double rx = g * haar_x(ii, row, col, wavelet);
                    const double ry = g * haar_y(ii, row, col, wavelet);
                    sum_dx += rx;
                    sum_adx += std::abs(rx);
                    sum_dy += ry;
                    sum_ady += std::abs(ry);
                }
            d[slot++] = sum_dx;
            d[slot++] = sum_adx;
            d[slot++] = sum_dy;
            d[slot++] = sum_ady;
        }

    double norm2 = 0.0;
    for (double v : d)
        norm2 += v * v;
    const double norm = std::sqrt(norm2);
    if (!(norm > 1e-12))
        return std::nullopt;
    for (double& v : d)
        v /= norm;
    return d;
}

} // namespace

FeatureSet describe(const IntegralImage& ii, std::span<const Keypoint> keypoints)
{
    FeatureSet out;
    out.keypoints.reserve(keypoints.size());
    out.descriptors.reserve(keypoints.size());
    for (const Keypoint& kp : keypoints) {
        if (auto d = describe_one(ii, kp)) {
            out.keypoints.push_back(kp);
            out.descriptors.push_back(*d);
        }
    }
    return out;
}

FeatureSet describe(const TransmissionImage& img, std::span<const Keypoint> keypoints)
{
    return describe(IntegralImage(img), keypoints);
}

FeatureSet extract_features(const TransmissionImage& img, const DetectorParams& params)
{
    const auto keypoints = detect_keypoints(img, params);
    return describe(IntegralImage(img), keypoints);
}

// ---------------------------------------------------------------------------
// Matching

double descriptor_distance(const Descriptor& a, const Descriptor& b)
{
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        s += d * d;
    }
    return std::sqrt(s);
}

std::vector<KnnMatch> match_knn(std::span<const Descriptor> ref, std::span<const Descriptor> target)
{
    std::vector<KnnMatch> out;
    if (target.empty())
        return out;
    out.reserve(ref.size());
    constexpr double inf = std::numeric_limits<double>::infinity();
    for (std::size_t r = 0; r < ref.size(); ++r) {
        KnnMatch m;
        m.ref_idx = r;
        m.d1 = inf;
        m.d2 = inf;
        for (std::size_t t = 0; t < target.size(); ++t) {
            const double d = descriptor_distance(ref[r], target[t]);
            if (d < m.d1) {
                m.second_idx = (m.d1 < inf) ? std::optional<std::size_t>(m.best_idx) : std::nullopt;
                m.d2 = m.d1;
                m.best_idx = t;
                m.d1 = d;
            } else if (d < m.d2 || !m.second_idx) {
                m.second_idx = t;
                m.d2 = d;
            }
        }
        out.push_back(m);
    }
    return out;
}

std::vector<KnnMatch> ratio_test(std::span<const KnnMatch> matches, double ratio)
{
    std::vector<KnnMatch> out;
    for (const KnnMatch& m : matches) {
        if (!m.second_idx)
            continue;
        const bool keep = (m.d2 == 0.0) ? (m.d1 == 0.0) : (m.d1 < ratio * m.d2);
        if (keep)
            out.push_back(m);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Match-rate matrices

double MatchRateMatrix::rate(std::size_t i, std::size_t j) const
{
    return total[i][j] == 0 ? 0.0 : static_cast<double>(matched[i][j]) / static_cast<double>(total[i][j]);
}

namespace {

std::string fmt_double(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof(buf), v);
    return {buf, r.ptr};
}

void check_labels(std::size_t n, std::span<const std::string> labels)
{
    if (labels.size() != n)
        throw ValidationError("match_rate_matrix: one label per image required");
}

} // namespace

std::string MatchRateMatrix::to_csv() const
{
    std::string out = "ref,target,matched,total,rate\n";
    for (std::size_t i = 0; i < ref_labels.size(); ++i)
        for (std::size_t j = 0; j < target_labels.size(); ++j)
            out += ref_labels[i] + ',' + target_labels[j] + ',' + std::to_string(matched[i][j]) + ',' +
                   std::to_string(total[i][j]) + ',' + fmt_double(rate(i, j)) + '\n';
    return out;
}

std::string MatchRateMatrix::to_json() const
{
    nlohmann::ordered_json j;
    j["refs"] = ref_labels;
    j["targets"] = target_labels;
    j["matched"] = matched;
    j["total"] = total;
    std::vector<std::vector<double>> rates(ref_labels.size(), std::vector<double>(target_labels.size()));
    for (std::size_t a = 0; a < ref_labels.size(); ++a)
        for (std::size_t b = 0; b < target_labels.size(); ++b)
            rates[a][b] = rate(a, b);
    j["rate"] = rates;
    return j.dump(2) + '\n';
}

MatchRateMatrix MatchRateMatrix::from_csv(std::string_view csv)
{
    MatchRateMatrix m;
    std::vector<std::array<std::string, 4>> rows;
    bool header = true;
    while (!csv.empty()) {
        const auto nl = csv.find('\n');
        std::string_view line = csv.substr(0, nl);
        csv = (nl == std::string_view::npos) ? std::string_view{} : csv.substr(nl + 1);
        if (line.empty())
            continue;
        if (header) {
            if (line != "ref,target,matched,total,rate")
                throw FormatError("match CSV: unexpected header");
            header = false;
            continue;
        }
        std::array<std::string, 5> cells;
        std::size_t c = 0;
        for (std::size_t start = 0; c < 5; ++c) {
            const auto comma = line.find(',', start);
            cells[c] = std::string(line.substr(start, comma == std::string_view::npos ? line.npos : comma - start));
            if (comma == std::string_view::npos) {
                ++c;
                break;
            }
            start = comma + 1;
        }
        if (c != 5)
            throw FormatError("match CSV: expected 5 columns");
        rows.push_back({cells[0], cells[1], cells[2], cells[3]});
    }
    auto index_of = [](std::vector<std::string>& labels, const std::string& l) {
        const auto it = std::find(labels.begin(), labels.end(), l);
        if (it != labels.end())
            return static_cast<std::size_t>(it - labels.begin());
        labels.push_back(l);
        return labels.size() - 1;
    };
    for (const auto& r : rows) {
        index_of(m.ref_labels, r[0]);
        index_of(m.target_labels, r[1]);
    }
    m.matched.assign(m.ref_labels.size(), std::vector<long>(m.target_labels.size(), 0));
    m.total = m.matched;
    for (const auto& r : rows) {
        const auto i = index_of(m.ref_labels, r[0]);
        const auto j = index_of(m.target_labels, r[1]);
        m.matched[i][j] = std::stol(r[2]);
        m.total[i][j] = std::stol(r[3]);
    }
    return m;
}

MatchRateMatrix match_rate_matrix(std::span<const FeatureSet> features, std::span<const std::string> labels,
                                  double ratio)
{
    check_labels(features.size(), labels);
    if (features.size() < 2)
        throw ValidationError("match_rate_matrix needs at least two images");
    const std::size_t n = features.size();
    MatchRateMatrix m;
    m.ref_labels.assign(labels.begin(), labels.end());
    m.target_labels = m.ref_labels;
    m.matched.assign(n, std::vector<long>(n, 0));
    m.total.assign(n, std::vector<long>(n, 0));
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) {
            const auto knn = match_knn(features[i].descriptors, features[j].descriptors);
            m.matched[i][j] = static_cast<long>(ratio_test(knn, ratio).size());
            m.total[i][j] = static_cast<long>(features[i].descriptors.size());
        }
    return m;
}

MatchRateMatrix match_rate_matrix(std::span<const TransmissionImage> images, std::span<const std::string> labels,
                                  const MatchParams& params)
{
    check_labels(images.size(), labels);
    std::vector<FeatureSet> features;
    features.reserve(images.size());
    for (const auto& img : images)
        features.push_back(extract_features(img, params.detector));
    return match_rate_matrix(features, labels, params.ratio);
}

MatchRateMatrix match_rate_matrix(std::span<const TransmissionImage> refs, std::span<const std::string> ref_labels,
                                  std::span<const TransmissionImage> targets,
                                  std::span<const std::string> target_labels, const MatchParams& params)
{
    check_labels(refs.size(), ref_labels);
    check_labels(targets.size(), target_labels);
    std::vector<FeatureSet> rf, tf;
    for (const auto& img : refs)
        rf.push_back(extract_features(img, params.detector));
    for (const auto& img : targets)
        tf.push_back(extract_features(img, params.detector));
    MatchRateMatrix m;
    m.ref_labels.assign(ref_labels.begin(), ref_labels.end());
    m.target_labels.assign(target_labels.begin(), target_labels.end());
    m.matched.assign(rf.size(), std::vector<long>(tf.size(), 0));
    m.total = m.matched;
    for (std::size_t i = 0; i < rf.size(); ++i)
        for (std::size_t j = 0; j < tf.size(); ++j) {
            const auto knn = match_knn(rf[i].descriptors, tf[j].descriptors);
            m.matched[i][j] = static_cast<long>(ratio_test(knn, params.ratio).size());
            m.total[i][j] = static_cast<long>(rf[i].descriptors.size());
        }
    return m;
}

} // namespace transid

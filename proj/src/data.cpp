#include "bline/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <json.hpp>

namespace bline {

namespace fs = std::filesystem;
using nlohmann::json;

std::vector<long> ClipAnnotation::frame_set() const {
    std::vector<long> out;
    for (auto [s, e] : bline_intervals)
        for (long t = s; t < e; ++t) out.push_back(t);
    return out;
}

void validate_annotation(const ClipAnnotation& ann, long frame_count) {
    long prev_end = -1;
    for (auto [s, e] : ann.bline_intervals) {
        if (s < 0 || e > frame_count || s >= e)
            throw DataError("clip '" + ann.clip_id + "': interval [" + std::to_string(s) + "," +
                            std::to_string(e) + ") out of bounds for " + std::to_string(frame_count) +
                            " frames");
        if (s < prev_end)
            throw DataError("clip '" + ann.clip_id + "': intervals overlap or are unsorted");
        prev_end = e;
    }
    const bool has = !ann.bline_intervals.empty();
    if (has != (ann.label == Label::bline))
        throw DataError("clip '" + ann.clip_id + "': label does not match interval presence");
}

void write_pgm(const fs::path& path, const Frame& frame, long h, long w) {
    if (frame.size() != h * w) throw DataError("write_pgm: frame size mismatch: " + path.string());
    std::ofstream f(path, std::ios::binary);
    if (!f) throw DataError("write_pgm: cannot open " + path.string());
    f << "P5\n" << w << " " << h << "\n255\n";
    std::vector<unsigned char> buf(static_cast<size_t>(h * w));
    for (long i = 0; i < h * w; ++i) {
        const float v = std::clamp(frame[i], 0.0f, 1.0f);
        buf[static_cast<size_t>(i)] = static_cast<unsigned char>(std::lround(v * 255.0f));
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

namespace {

int pgm_token(std::istream& f) {
    // next integer token, skipping whitespace and '#' comments
    int c = f.get();
    while (c != EOF && (std::isspace(c) || c == '#')) {
        if (c == '#')
            while (c != EOF && c != '\n') c = f.get();
        c = f.get();
    }
    int v = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        v = v * 10 + (c - '0');
        any = true;
        c = f.get();
    }
    if (!any) throw DataError("pgm: malformed header");
    return v;
}

}  // namespace

Frame read_pgm(const fs::path& path, long& h, long& w) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("read_pgm: cannot open " + path.string());
    char m0 = static_cast<char>(f.get()), m1 = static_cast<char>(f.get());
    const bool color = m0 == 'P' && m1 == '6';
    if (!(m0 == 'P' && (m1 == '5' || m1 == '6')))
        throw DataError("read_pgm: not a binary PGM/PPM: " + path.string());
    w = pgm_token(f);
    h = pgm_token(f);
    const int maxval = pgm_token(f);
    if (maxval != 255) throw DataError("read_pgm: unsupported maxval in " + path.string());
    const long ch = color ? 3 : 1;
    std::vector<unsigned char> buf(static_cast<size_t>(h * w * ch));
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("read_pgm: truncated pixel data in " + path.string());
    Frame out(h * w);
    if (color) {
        for (long i = 0; i < h * w; ++i) {
            const float r = buf[static_cast<size_t>(3 * i)] / 255.0f;
            const float g = buf[static_cast<size_t>(3 * i + 1)] / 255.0f;
            const float b = buf[static_cast<size_t>(3 * i + 2)] / 255.0f;
            out[i] = 0.299f * r + 0.587f * g + 0.114f * b;
        }
    } else {
        for (long i = 0; i < h * w; ++i) out[i] = buf[static_cast<size_t>(i)] / 255.0f;
    }
    return out;
}

void save_dataset(const Dataset& ds, const fs::path& root) {
    fs::create_directories(root / "frames");
    json clips = json::array();
    if (ds.clips.size() != ds.annotations.size())
        throw DataError("save_dataset: clip/annotation count mismatch");
    for (size_t i = 0; i < ds.clips.size(); ++i) {
        const VideoClip& c = ds.clips[i];
        const ClipAnnotation& a = ds.annotations[i];
        json intervals = json::array();
        for (auto [s, e] : a.bline_intervals) intervals.push_back(json::array({s, e}));
        clips.push_back({{"id", c.id},
                         {"group", c.group},
                         {"label", a.label == Label::bline ? "bline" : "non_bline"},
                         {"num_frames", c.num_frames()},
                         {"bline_intervals", intervals}});
        const fs::path dir = root / "frames" / c.id;
        fs::create_directories(dir);
        char name[32];
        for (long t = 0; t < c.num_frames(); ++t) {
            std::snprintf(name, sizeof(name), "%05ld.pgm", t);
            write_pgm(dir / name, c.frames[static_cast<size_t>(t)], c.height, c.width);
        }
    }
    json doc{{"version", 1}, {"fps", ds.fps}, {"clips", clips}};
    std::ofstream f(root / "annotations.json");
    if (!f) throw DataError("save_dataset: cannot write " + (root / "annotations.json").string());
    f << doc.dump(2) << "\n";
}

Dataset load_dataset(const fs::path& root) {
    const fs::path ann_path = root / "annotations.json";
    std::ifstream f(ann_path);
    if (!f) throw DataError("load_dataset: missing " + ann_path.string());
    json doc;
    try {
        f >> doc;
    } catch (const json::exception& e) {
        throw DataError("load_dataset: malformed JSON in " + ann_path.string() + ": " + e.what());
    }
    Dataset ds;
    try {
        if (doc.value("version", 0) != 1)
            throw DataError("load_dataset: unsupported annotations version in " + ann_path.string());
        ds.fps = doc.value("fps", 30.0);
        for (const json& jc : doc.at("clips")) {
            VideoClip clip;
            clip.id = jc.at("id").get<std::string>();
            clip.group = jc.value("group", clip.id);
            clip.fps = ds.fps;
            ClipAnnotation ann;
            ann.clip_id = clip.id;
            const std::string label = jc.at("label").get<std::string>();
            if (label == "bline")
                ann.label = Label::bline;
            else if (label == "non_bline")
                ann.label = Label::non_bline;
            else
                throw DataError("clip '" + clip.id + "': unknown label '" + label + "'");
            for (const json& ji : jc.at("bline_intervals"))
                ann.bline_intervals.emplace_back(ji.at(0).get<long>(), ji.at(1).get<long>());
            const long n = jc.at("num_frames").get<long>();

            const fs::path dir = root / "frames" / clip.id;
            if (!fs::is_directory(dir))
                throw DataError("clip '" + clip.id + "': frame directory missing: " + dir.string());
            char name[32];
            for (long t = 0; t < n; ++t) {
                std::snprintf(name, sizeof(name), "%05ld.pgm", t);
                const fs::path p = dir / name;
                if (!fs::exists(p))
                    throw DataError("clip '" + clip.id + "': missing frame " + p.string());
                long h = 0, w = 0;
                Frame frame = read_pgm(p, h, w);
                if (clip.frames.empty()) {
                    clip.height = h;
                    clip.width = w;
                } else if (h != clip.height || w != clip.width) {
                    throw DataError("clip '" + clip.id + "': frame size mismatch at " + p.string());
                }
                clip.frames.push_back(std::move(frame));
            }
            validate_annotation(ann, n);
            ds.clips.push_back(std::move(clip));
            ds.annotations.push_back(std::move(ann));
        }
    } catch (const json::exception& e) {
        throw DataError("load_dataset: bad annotation schema in " + ann_path.string() + ": " + e.what());
    }
    return ds;
}

std::vector<std::pair<VideoClip, ClipAnnotation>> slice_clips(const VideoClip& video,
                                                              const ClipAnnotation& ann) {
    const long n = video.num_frames();
    const long len = std::lround(video.fps);
    if (n < len)
        throw DataError("clip '" + video.id + "': too short to slice (" + std::to_string(n) +
                        " frames, window " + std::to_string(len) + ")");
    const long stride = std::lround(0.8 * static_cast<double>(len));

    std::vector<long> starts;
    for (long s = 0; s + len <= n; s += stride) starts.push_back(s);
    if (starts.back() + len < n) starts.push_back(n - len);

    std::vector<std::pair<VideoClip, ClipAnnotation>> out;
    for (size_t wi = 0; wi < starts.size(); ++wi) {
        const long s = starts[wi];
        VideoClip sub;
        sub.id = video.id + "_w" + std::to_string(wi);
        sub.group = video.group.empty() ? video.id : video.group;
        sub.fps = video.fps;
        sub.height = video.height;
        sub.width = video.width;
        sub.frames.assign(video.frames.begin() + s, video.frames.begin() + s + len);

        ClipAnnotation sa;
        sa.clip_id = sub.id;
        for (auto [a, b] : ann.bline_intervals) {
            const long lo = std::max(a, s), hi = std::min(b, s + len);
            if (lo < hi) sa.bline_intervals.emplace_back(lo - s, hi - s);
        }
        sa.label = sa.bline_intervals.empty() ? Label::non_bline : Label::bline;
        out.emplace_back(std::move(sub), std::move(sa));
    }
    return out;
}

Frame resize_frame(const Frame& frame, long h, long w, long out_h, long out_w) {
    if (h < 2 || w < 2) throw DataError("resize_frame: input extents must be >= 2");
    if (frame.size() != h * w) throw DataError("resize_frame: frame size mismatch");
    if (h == out_h && w == out_w) return frame;
    Frame out(out_h * out_w);
    const double sy = out_h > 1 ? static_cast<double>(h - 1) / static_cast<double>(out_h - 1) : 0.0;
    const double sx = out_w > 1 ? static_cast<double>(w - 1) / static_cast<double>(out_w - 1) : 0.0;
    for (long i = 0; i < out_h; ++i) {
        const double fy = i * sy;
        const long y0 = std::min(static_cast<long>(fy), h - 2);
        const double dy = fy - y0;
        for (long j = 0; j < out_w; ++j) {
            const double fx = j * sx;
            const long x0 = std::min(static_cast<long>(fx), w - 2);
            const double dx = fx - x0;
            const double v00 = frame[y0 * w + x0], v01 = frame[y0 * w + x0 + 1];
            const double v10 = frame[(y0 + 1) * w + x0], v11 = frame[(y0 + 1) * w + x0 + 1];
            out[i * out_w + j] = static_cast<float>((1 - dy) * ((1 - dx) * v00 + dx * v01) +
                                                    dy * ((1 - dx) * v10 + dx * v11));
        }
    }
    return out;
}

VideoClip hflip(const VideoClip& clip) {
    VideoClip out = clip;
    for (Frame& fr : out.frames)
        for (long r = 0; r < clip.height; ++r)
            std::reverse(fr.data() + r * clip.width, fr.data() + (r + 1) * clip.width);
    return out;
}

FoldSplit kfold_split(std::vector<std::string> group_ids, int k, unsigned seed) {
    std::sort(group_ids.begin(), group_ids.end());
    group_ids.erase(std::unique(group_ids.begin(), group_ids.end()), group_ids.end());
    if (static_cast<long>(group_ids.size()) < k)
        throw DataError("kfold_split: " + std::to_string(group_ids.size()) + " groups for " +
                        std::to_string(k) + " folds");
    std::mt19937 rng(seed);
    std::shuffle(group_ids.begin(), group_ids.end(), rng);
    FoldSplit split;
    split.k = k;
    for (size_t i = 0; i < group_ids.size(); ++i)
        split.fold_of[group_ids[i]] = static_cast<int>(i % static_cast<size_t>(k));
    return split;
}

Tensor clip_to_tensor(const VideoClip& clip, long target_size, bool flipped) {
    const long t = clip.num_frames();
    if (t < 1) throw DataError("clip '" + clip.id + "': no frames");
    Tensor out({t, 1, target_size, target_size});
    for (long ti = 0; ti < t; ++ti) {
        Frame fr = resize_frame(clip.frames[static_cast<size_t>(ti)], clip.height, clip.width,
                                target_size, target_size);
        double* dst = out.data() + ti * target_size * target_size;
        if (flipped) {
            for (long r = 0; r < target_size; ++r)
                for (long c = 0; c < target_size; ++c)
                    dst[r * target_size + c] = fr[r * target_size + (target_size - 1 - c)];
        } else {
            for (long i = 0; i < target_size * target_size; ++i) dst[i] = fr[i];
        }
    }
    return out;
}

}  // namespace bline

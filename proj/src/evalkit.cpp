#include "pvp/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "pvp/kernels.hpp"

namespace pvp {

double psnr_from_mse(double mse) {
    if (mse <= 0.0) return kPsnrIdentical;
    return 10.0 * std::log10(1.0 / mse);
}

double psnr(const Image& a, const Image& b) { return psnr_from_mse(mean_squared_error(a, b)); }

double ssim(const Image& a, const Image& b) {
    require_same_dims(a, b);
    if (a.height < 11 || a.width < 11) throw Error(ErrorKind::InvalidArgument, "image smaller than the 11x11 SSIM window");
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += kernels::ssim_channel_parallel(a.pixels, b.pixels, a.height, a.width, c);
    return s / 3.0;
}

MaskedMetrics masked_metrics(const Image& a, const Image& b, const AlphaMask& mask, const PerceptualMetric& metric) {
    require_same_dims(a, b);
    if (mask.height != a.height || mask.width != a.width || mask.alpha.size() != static_cast<std::size_t>(a.height) * a.width)
        throw Error(ErrorKind::ShapeMismatch, "mask dimension mismatch");
    double weight = 0.0, s = 0.0;
    int y0 = a.height, y1 = -1, x0 = a.width, x1 = -1;
    for (int y = 0; y < a.height; ++y)
        for (int x = 0; x < a.width; ++x) {
            const double m = mask.alpha[static_cast<std::size_t>(y) * a.width + x];
            if (m < 0.0 || m > 1.0 || !std::isfinite(m)) throw Error(ErrorKind::InvalidArgument, "mask values must lie in [0,1]");
            if (m == 0.0) continue;
            weight += m;
            for (int c = 0; c < 3; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                s += m * d * d;
            }
            y0 = std::min(y0, y), y1 = std::max(y1, y), x0 = std::min(x0, x), x1 = std::max(x1, x);
        }
    if (weight == 0.0) throw Error(ErrorKind::InvalidArgument, "empty mask");
    MaskedMetrics r;
    r.mse = s / (3.0 * weight);
    r.psnr = psnr_from_mse(r.mse);

    const int bh = y1 - y0 + 1, bw = x1 - x0 + 1;
    if (bh == a.height && bw == a.width) {
        r.ssim = ssim(a, b);
    } else {
        Image ca(bh, bw), cb(bh, bw);
        for (int y = 0; y < bh; ++y)
            for (int x = 0; x < bw; ++x)
                for (int c = 0; c < 3; ++c) {
                    ca.at(y, x, c) = a.at(y0 + y, x0 + x, c);
                    cb.at(y, x, c) = b.at(y0 + y, x0 + x, c);
                }
        r.ssim = ssim(ca, cb);
    }

    Image ma = a, mb = b;
    for (std::size_t p = 0; p < mask.alpha.size(); ++p)
        for (int c = 0; c < 3; ++c) {
            ma.pixels[p * 3 + c] *= mask.alpha[p];
            mb.pixels[p * 3 + c] *= mask.alpha[p];
        }
    r.perceptual = metric.distance(ma, mb);
    return r;
}

std::string to_string(SplitProtocol p) {
    switch (p) {
        case SplitProtocol::Nha: return "nha";
        case SplitProtocol::Nbs: return "nbs";
        case SplitProtocol::Custom: return "custom";
    }
    return "?";
}

SplitProtocol protocol_from_string(const std::string& s) {
    if (s == "nha") return SplitProtocol::Nha;
    if (s == "nbs") return SplitProtocol::Nbs;
    if (s == "custom") return SplitProtocol::Custom;
    throw Error(ErrorKind::InvalidArgument, "unknown protocol '" + s + "' (expected nha, nbs or custom)");
}

Split split_dataset(int n_frames, const SplitSpec& spec) {
    auto fill = [](IndexRange r) {
        std::vector<int> v;
        for (int i = r.begin; i < r.end; ++i) v.push_back(i);
        return v;
    };
    Split s;
    switch (spec.protocol) {
        case SplitProtocol::Nha:
            if (n_frames < 1450)
                throw Error(ErrorKind::InvalidArgument, "nha protocol needs at least 1450 frames, got " + std::to_string(n_frames));
            s.train = fill({0, 750});
            s.eval = fill({750, 1450});
            break;
        case SplitProtocol::Nbs:
            if (n_frames < 501)
                throw Error(ErrorKind::InvalidArgument, "nbs protocol needs at least 501 frames, got " + std::to_string(n_frames));
            s.train = fill({0, n_frames - 500});
            s.eval = fill({n_frames - 500, n_frames});
            break;
        case SplitProtocol::Custom: {
            const auto& t = spec.train;
            const auto& e = spec.eval;
            if (t.begin < 0 || e.begin < 0 || t.size() < 0 || e.size() <= 0)
                throw Error(ErrorKind::InvalidArgument, "custom split ranges must be non-negative and the eval range non-empty");
            const int need = std::max(t.end, e.end);
            if (need > n_frames)
                throw Error(ErrorKind::InvalidArgument, "custom split needs at least " + std::to_string(need) + " frames, got " +
                                                            std::to_string(n_frames));
            if (t.size() > 0 && t.begin < e.end && e.begin < t.end)
                throw Error(ErrorKind::InvalidArgument, "custom split ranges overlap");
            s.train = fill(t);
            s.eval = fill(e);
            break;
        }
    }
    return s;
}

FrameMetrics EvalReport::aggregate() const {
    FrameMetrics m;
    m.frame = static_cast<int>(frames.size());
    if (frames.empty()) return m;
    const double n = static_cast<double>(frames.size());
    bool masked = true;
    MaskedMetrics mm;
    for (const auto& f : frames) {
        m.psnr += f.psnr / n;
        m.ssim += f.ssim / n;
        m.perceptual += f.perceptual / n;
        if (f.masked) {
            mm.mse += f.masked->mse / n;
            mm.psnr += f.masked->psnr / n;
            mm.ssim += f.masked->ssim / n;
            mm.perceptual += f.masked->perceptual / n;
        } else {
            masked = false;
        }
    }
    if (masked) m.masked = mm;
    return m;
}

namespace {

std::string num(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(10) << v;
    return os.str();
}

}  // namespace

std::string EvalReport::to_text() const {
    std::ostringstream os;
    const auto agg = aggregate();
    os << "protocol: " << protocol << "  eval frames: " << frames.size() << "  train frames: " << train_frames << "\n";
    os << "perceptual metric: " << perceptual_name << "  resampler: " << resampler
       << "  masked ssim: " << masked_ssim_region << "\n\n";
    os << std::left << std::setw(10) << "frame" << std::setw(14) << "PSNR" << std::setw(14) << "SSIM" << std::setw(18)
       << perceptual_name;
    if (agg.masked) os << std::setw(14) << "mPSNR" << std::setw(14) << "mSSIM" << std::setw(18) << ("m" + perceptual_name);
    os << "\n";
    auto row = [&](const std::string& label, const FrameMetrics& f) {
        os << std::left << std::setw(10) << label << std::setw(14) << num(f.psnr) << std::setw(14) << num(f.ssim)
           << std::setw(18) << num(f.perceptual);
        if (f.masked) os << std::setw(14) << num(f.masked->psnr) << std::setw(14) << num(f.masked->ssim) << std::setw(18) << num(f.masked->perceptual);
        os << "\n";
    };
    for (const auto& f : frames) row(std::to_string(f.frame), f);
    row("mean", agg);
    return os.str();
}

std::string EvalReport::to_key_values() const {
    std::ostringstream os;
    const auto agg = aggregate();
    os << "protocol=" << protocol << "\n";
    os << "perceptual_metric=" << perceptual_name << "\n";
    os << "resampler=" << resampler << "\n";
    os << "masked_ssim_region=" << masked_ssim_region << "\n";
    os << "train_frames=" << train_frames << "\n";
    os << "eval_frames=" << frames.size() << "\n";
    for (const auto& f : frames) {
        os << "frame=" << f.frame << " psnr=" << num(f.psnr) << " ssim=" << num(f.ssim) << " perceptual=" << num(f.perceptual);
        if (f.masked)
            os << " masked_psnr=" << num(f.masked->psnr) << " masked_ssim=" << num(f.masked->ssim)
               << " masked_perceptual=" << num(f.masked->perceptual);
        os << "\n";
    }
    os << "mean_psnr=" << num(agg.psnr) << "\n";
    os << "mean_ssim=" << num(agg.ssim) << "\n";
    os << "mean_perceptual=" << num(agg.perceptual) << "\n";
    if (agg.masked) {
        os << "mean_masked_psnr=" << num(agg.masked->psnr) << "\n";
        os << "mean_masked_ssim=" << num(agg.masked->ssim) << "\n";
        os << "mean_masked_perceptual=" << num(agg.masked->perceptual) << "\n";
    }
    return os.str();
}

EvalReport evaluate_frames(const std::vector<Image>& predictions, const std::vector<Image>& ground_truth,
                           const std::vector<int>& frame_ids, const std::vector<AlphaMask>* masks,
                           const PerceptualMetric& metric) {
    if (predictions.size() != ground_truth.size() || frame_ids.size() != predictions.size())
        throw Error(ErrorKind::ShapeMismatch, "prediction and ground-truth counts differ");
    if (masks != nullptr && masks->size() != predictions.size()) throw Error(ErrorKind::ShapeMismatch, "mask count differs");
    EvalReport r;
    r.perceptual_name = metric.name();
    r.frames.resize(predictions.size());
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(predictions.size()); ++i) {
        const auto k = static_cast<std::size_t>(i);
        Image pred = predictions[k];
        if (!pred.same_dims(ground_truth[k])) pred = resize_bilinear(pred, ground_truth[k].height, ground_truth[k].width);
        FrameMetrics& f = r.frames[k];
        f.frame = frame_ids[k];
        f.psnr = psnr(pred, ground_truth[k]);
        f.ssim = ssim(pred, ground_truth[k]);
        f.perceptual = metric.distance(pred, ground_truth[k]);
        if (masks != nullptr) f.masked = masked_metrics(pred, ground_truth[k], (*masks)[k], metric);
    }
    return r;
}

namespace {

std::vector<std::filesystem::path> list_files(const std::filesystem::path& dir, const std::string& ext) {
    if (!std::filesystem::is_directory(dir)) throw Error(ErrorKind::NotFound, "not a directory: " + dir.string());
    std::vector<std::filesystem::path> out;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ext) out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace

EvalReport evaluate_directories(const std::filesystem::path& pred_dir, const std::filesystem::path& gt_dir,
                                const SplitSpec& spec, const std::optional<std::filesystem::path>& mask_dir,
                                const PerceptualMetric& metric) {
    const auto gt_files = list_files(gt_dir, ".ppm");
    const auto pred_files = list_files(pred_dir, ".ppm");
    const Split split = split_dataset(static_cast<int>(gt_files.size()), spec);
    const bool full = pred_files.size() == gt_files.size();
    if (!full && pred_files.size() != split.eval.size())
        throw Error(ErrorKind::ShapeMismatch, "prediction directory holds " + std::to_string(pred_files.size()) +
                                                  " frames; expected " + std::to_string(gt_files.size()) + " or " +
                                                  std::to_string(split.eval.size()));
    std::vector<std::filesystem::path> mask_files;
    if (mask_dir) {
        mask_files = list_files(*mask_dir, ".pgm");
        if (mask_files.size() != gt_files.size())
            throw Error(ErrorKind::ShapeMismatch, "mask directory must hold one mask per ground-truth frame");
    }
    std::vector<Image> preds, gts;
    std::vector<AlphaMask> masks;
    for (std::size_t j = 0; j < split.eval.size(); ++j) {
        const auto i = static_cast<std::size_t>(split.eval[j]);
        gts.push_back(read_ppm(gt_files[i]));
        preds.push_back(read_ppm(pred_files[full ? i : j]));
        if (mask_dir) masks.push_back(read_pgm(mask_files[i]));
    }
    auto r = evaluate_frames(preds, gts, split.eval, mask_dir ? &masks : nullptr, metric);
    r.protocol = to_string(spec.protocol);
    r.train_frames = static_cast<int>(split.train.size());
    return r;
}

Image resize_bilinear(const Image& img, int height, int width) {
    Image out(height, width);
    const double sy = static_cast<double>(img.height) / height;
    const double sx = static_cast<double>(img.width) / width;
    for (int y = 0; y < height; ++y) {
        const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(img.height - 1));
        const int y0 = static_cast<int>(fy);
        const int y1 = std::min(y0 + 1, img.height - 1);
        const double ty = fy - y0;
        for (int x = 0; x < width; ++x) {
            const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(img.width - 1));
            const int x0 = static_cast<int>(fx);
            const int x1 = std::min(x0 + 1, img.width - 1);
            const double tx = fx - x0;
            for (int c = 0; c < 3; ++c) {
                const double top = (1 - tx) * img.at(y0, x0, c) + tx * img.at(y0, x1, c);
                const double bot = (1 - tx) * img.at(y1, x0, c) + tx * img.at(y1, x1, c);
                out.at(y, x, c) = (1 - ty) * top + ty * bot;
            }
        }
    }
    return out;
}

namespace {

// Reads the netpbm header; comments allowed between tokens.
void read_header(std::istream& is, const std::string& magic, int& w, int& h, int& maxval, const std::string& path) {
    std::string m;
    is >> m;
    if (m != magic) throw Error(ErrorKind::Format, path + ": expected " + magic + " netpbm file");
    int* fields[3] = {&w, &h, &maxval};
    for (int* f : fields) {
        is >> std::ws;
        while (is.peek() == '#') {
            std::string line;
            std::getline(is, line);
            is >> std::ws;
        }
        if (!(is >> *f)) throw Error(ErrorKind::Format, path + ": malformed header");
    }
    is.get();
    if (w <= 0 || h <= 0 || maxval != 255) throw Error(ErrorKind::Format, path + ": only 8-bit images are supported");
}

}  // namespace

std::vector<unsigned char> to_rgb8(const Image& img) {
    std::vector<unsigned char> out(img.pixels.size());
    for (std::size_t i = 0; i < img.pixels.size(); ++i)
        out[i] = static_cast<unsigned char>(std::lround(std::clamp(img.pixels[i], 0.0, 1.0) * 255.0));
    return out;
}

Image from_rgb8(const std::vector<unsigned char>& rgb, int height, int width) {
    Image img(height, width);
    if (rgb.size() != img.pixels.size()) throw Error(ErrorKind::ShapeMismatch, "RGB buffer size mismatch");
    for (std::size_t i = 0; i < rgb.size(); ++i) img.pixels[i] = rgb[i] / 255.0;
    return img;
}

Image read_ppm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path.string());
    int w = 0, h = 0, maxval = 0;
    read_header(is, "P6", w, h, maxval, path.string());
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h * 3);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw Error(ErrorKind::Format, path.string() + ": truncated pixel data");
    return from_rgb8(buf, h, w);
}

void write_ppm(const std::filesystem::path& path, const Image& img) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + path.string());
    os << "P6\n" << img.width << " " << img.height << "\n255\n";
    const auto buf = to_rgb8(img);
    os.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

AlphaMask read_pgm(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error(ErrorKind::NotFound, "cannot read " + path.string());
    int w = 0, h = 0, maxval = 0;
    read_header(is, "P5", w, h, maxval, path.string());
    std::vector<unsigned char> buf(static_cast<std::size_t>(w) * h);
    is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!is) throw Error(ErrorKind::Format, path.string() + ": truncated pixel data");
    AlphaMask m{h, w, std::vector<double>(buf.size())};
    for (std::size_t i = 0; i < buf.size(); ++i) m.alpha[i] = buf[i] / 255.0;
    return m;
}

void write_pgm(const std::filesystem::path& path, const AlphaMask& mask) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error(ErrorKind::NotFound, "cannot write " + path.string());
    os << "P5\n" << mask.width << " " << mask.height << "\n255\n";
    for (double a : mask.alpha) os.put(static_cast<char>(std::lround(std::clamp(a, 0.0, 1.0) * 255.0)));
}

}  // namespace pvp

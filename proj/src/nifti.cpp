// SPDX-License-Identifier: Apache-2.0
#include "cmseg/nifti.hpp"

#include <zlib.h>

#include <cmath>
#include <cstring>
#include <vector>

#include "cmseg/errors.hpp"

namespace cmseg {
namespace {

// nifti1 dtype codes
constexpr std::int16_t DT_UINT8 = 2;
constexpr std::int16_t DT_INT16 = 4;
constexpr std::int16_t DT_INT32 = 8;
constexpr std::int16_t DT_FLOAT32 = 16;
constexpr std::int16_t DT_FLOAT64 = 64;
constexpr std::int16_t DT_UINT16 = 512;

#pragma pack(push, 1)
struct Nifti1Header {
    std::int32_t sizeof_hdr;    // 348
    char data_type[10];
    char db_name[18];
    std::int32_t extents;
    std::int16_t session_error;
    char regular;
    char dim_info;
    std::int16_t dim[8];
    float intent_p1, intent_p2, intent_p3;
    std::int16_t intent_code;
    std::int16_t datatype;
    std::int16_t bitpix;
    std::int16_t slice_start;
    float pixdim[8];
    float vox_offset;
    float scl_slope;
    float scl_inter;
    std::int16_t slice_end;
    char slice_code;
    char xyzt_units;
    float cal_max, cal_min;
    float slice_duration;
    float toffset;
    std::int32_t glmax, glmin;
    char descrip[80];
    char aux_file[24];
    std::int16_t qform_code;
    std::int16_t sform_code;
    float quatern_b, quatern_c, quatern_d;
    float qoffset_x, qoffset_y, qoffset_z;
    float srow_x[4];
    float srow_y[4];
    float srow_z[4];
    char intent_name[16];
    char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "nifti1 header must be 348 bytes");

template <typename T>
void byteswap_inplace(T& v) {
    auto* p = reinterpret_cast<unsigned char*>(&v);
    for (std::size_t i = 0; i < sizeof(T) / 2; ++i) std::swap(p[i], p[sizeof(T) - 1 - i]);
}

void swap_header(Nifti1Header& h) {
    byteswap_inplace(h.sizeof_hdr);
    for (auto& d : h.dim) byteswap_inplace(d);
    byteswap_inplace(h.datatype);
    byteswap_inplace(h.bitpix);
    for (auto& p : h.pixdim) byteswap_inplace(p);
    byteswap_inplace(h.vox_offset);
    byteswap_inplace(h.scl_slope);
    byteswap_inplace(h.scl_inter);
}

class GzReader {
public:
    explicit GzReader(const std::string& path) : path_(path), f_(gzopen(path.c_str(), "rb")) {
        if (!f_) throw ValidationError("cannot open volume file: " + path);
    }
    ~GzReader() {
        if (f_) gzclose(f_);
    }
    GzReader(const GzReader&) = delete;
    GzReader& operator=(const GzReader&) = delete;

    void read(void* dst, std::size_t n) {
        std::size_t done = 0;
        auto* p = static_cast<unsigned char*>(dst);
        while (done < n) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(n - done, 1u << 28));
            const int got = gzread(f_, p + done, chunk);
            if (got <= 0) throw ValidationError("truncated or corrupt volume file: " + path_);
            done += static_cast<std::size_t>(got);
        }
    }
    void skip(std::size_t n) {
        std::vector<char> junk(std::min<std::size_t>(n, 1 << 16));
        while (n) {
            const std::size_t chunk = std::min(n, junk.size());
            read(junk.data(), chunk);
            n -= chunk;
        }
    }

private:
    std::string path_;
    gzFile f_;
};

struct RawImage {
    Index d = 0, h = 0, w = 0;
    Spacing spacing = kUnitSpacing;
    std::vector<double> values;  // x fastest, matching disk order
};

template <typename T>
void decode(const std::vector<unsigned char>& raw, bool swap, double slope, double inter,
            std::vector<double>& out) {
    const std::size_t n = raw.size() / sizeof(T);
    out.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        T v;
        std::memcpy(&v, raw.data() + i * sizeof(T), sizeof(T));
        if (swap) byteswap_inplace(v);
        out[i] = static_cast<double>(v) * slope + inter;
    }
}

RawImage read_raw(const std::string& path) {
    GzReader in(path);
    Nifti1Header hdr{};
    in.read(&hdr, sizeof(hdr));

    bool swap = false;
    if (hdr.sizeof_hdr != 348) {
        swap = true;
        swap_header(hdr);
        if (hdr.sizeof_hdr != 348) throw ValidationError("not a NIfTI-1 file: " + path);
    }
    if (std::strncmp(hdr.magic, "n+1", 3) != 0 && std::strncmp(hdr.magic, "ni1", 3) != 0)
        throw ValidationError("missing NIfTI magic in " + path);

    const int ndim = hdr.dim[0];
    if (ndim < 3 || ndim > 7) throw ValidationError("unsupported NIfTI dimensionality in " + path);
    for (int i = 4; i <= ndim; ++i)
        if (hdr.dim[i] > 1) throw ValidationError("expected a 3-D image, got a higher-dimensional one: " + path);

    RawImage img;
    img.w = hdr.dim[1];
    img.h = hdr.dim[2];
    img.d = hdr.dim[3];
    if (img.w < 1 || img.h < 1 || img.d < 1) throw ValidationError("degenerate image dimensions in " + path);
    img.spacing = {std::abs(double(hdr.pixdim[3])), std::abs(double(hdr.pixdim[2])), std::abs(double(hdr.pixdim[1]))};
    for (double& s : img.spacing)
        if (!(s > 0)) s = 1.0;

    double slope = hdr.scl_slope;
    double inter = hdr.scl_inter;
    if (slope == 0.0 || !std::isfinite(slope)) {
        slope = 1.0;
        inter = 0.0;
    }

    const std::size_t nvox = static_cast<std::size_t>(img.d * img.h * img.w);
    const std::size_t bytes_per = static_cast<std::size_t>(hdr.bitpix) / 8;
    const std::size_t offset = static_cast<std::size_t>(hdr.vox_offset);
    if (offset < sizeof(hdr)) throw ValidationError("bad vox_offset in " + path);
    in.skip(offset - sizeof(hdr));

    std::vector<unsigned char> raw(nvox * bytes_per);
    in.read(raw.data(), raw.size());

    switch (hdr.datatype) {
        case DT_UINT8: decode<std::uint8_t>(raw, swap, slope, inter, img.values); break;
        case DT_INT16: decode<std::int16_t>(raw, swap, slope, inter, img.values); break;
        case DT_UINT16: decode<std::uint16_t>(raw, swap, slope, inter, img.values); break;
        case DT_INT32: decode<std::int32_t>(raw, swap, slope, inter, img.values); break;
        case DT_FLOAT32: decode<float>(raw, swap, slope, inter, img.values); break;
        case DT_FLOAT64: decode<double>(raw, swap, slope, inter, img.values); break;
        default:
            throw ValidationError("unsupported NIfTI datatype " + std::to_string(hdr.datatype) + " in " + path);
    }
    return img;
}

Nifti1Header make_header(Index d, Index h, Index w, const Spacing& sp, std::int16_t dtype, std::int16_t bitpix) {
    Nifti1Header hdr{};
    hdr.sizeof_hdr = 348;
    hdr.regular = 'r';
    hdr.dim[0] = 3;
    hdr.dim[1] = static_cast<std::int16_t>(w);
    hdr.dim[2] = static_cast<std::int16_t>(h);
    hdr.dim[3] = static_cast<std::int16_t>(d);
    for (int i = 4; i < 8; ++i) hdr.dim[i] = 1;
    hdr.datatype = dtype;
    hdr.bitpix = bitpix;
    hdr.pixdim[0] = 1.0f;
    hdr.pixdim[1] = static_cast<float>(sp[2]);
    hdr.pixdim[2] = static_cast<float>(sp[1]);
    hdr.pixdim[3] = static_cast<float>(sp[0]);
    hdr.vox_offset = 352.0f;
    hdr.scl_slope = 1.0f;
    hdr.scl_inter = 0.0f;
    hdr.xyzt_units = 2;  // millimetres
    hdr.qform_code = 0;
    hdr.sform_code = 1;
    hdr.srow_x[0] = static_cast<float>(sp[2]);
    hdr.srow_y[1] = static_cast<float>(sp[1]);
    hdr.srow_z[2] = static_cast<float>(sp[0]);
    std::memcpy(hdr.magic, "n+1", 4);
    return hdr;
}

bool ends_with_gz(const std::string& path) {
    return path.size() >= 3 && path.compare(path.size() - 3, 3, ".gz") == 0;
}

void write_file(const std::string& path, const Nifti1Header& hdr, const void* payload, std::size_t payload_bytes) {
    const char pad[4] = {0, 0, 0, 0};
    if (ends_with_gz(path)) {
        // zlib's default gzip header carries mtime 0, keeping output bytes
        // a pure function of content.
        gzFile f = gzopen(path.c_str(), "wb6");
        if (!f) throw RuntimeError("cannot create " + path);
        bool ok = gzwrite(f, &hdr, sizeof(hdr)) == int(sizeof(hdr)) && gzwrite(f, pad, 4) == 4;
        std::size_t done = 0;
        const auto* p = static_cast<const unsigned char*>(payload);
        while (ok && done < payload_bytes) {
            const unsigned chunk = static_cast<unsigned>(std::min<std::size_t>(payload_bytes - done, 1u << 28));
            ok = gzwrite(f, p + done, chunk) == int(chunk);
            done += chunk;
        }
        const bool closed = gzclose(f) == Z_OK;
        if (!ok || !closed) throw RuntimeError("short write to " + path);
    } else {
        FILE* f = std::fopen(path.c_str(), "wb");
        if (!f) throw RuntimeError("cannot create " + path);
        bool ok = std::fwrite(&hdr, 1, sizeof(hdr), f) == sizeof(hdr) && std::fwrite(pad, 1, 4, f) == 4 &&
                  std::fwrite(payload, 1, payload_bytes, f) == payload_bytes;
        ok = (std::fclose(f) == 0) && ok;
        if (!ok) throw RuntimeError("short write to " + path);
    }
}

}  // namespace

Volume read_nifti_volume(const std::string& path) {
    RawImage img = read_raw(path);
    Volume v(1, img.d, img.h, img.w, img.spacing);
    v.data = std::move(img.values);
    v.require_finite("read_nifti_volume(" + path + ")");
    return v;
}

LabelVolume read_nifti_labels(const std::string& path) {
    RawImage img = read_raw(path);
    LabelVolume l(img.d, img.h, img.w, img.spacing);
    for (std::size_t i = 0; i < img.values.size(); ++i) {
        const double v = img.values[i];
        const double r = std::nearbyint(v);
        if (!std::isfinite(v) || std::abs(v - r) > 1e-6 || r < 0 || r > 255)
            throw ValidationError("non-integer label voxel in " + path);
        l.labels[i] = static_cast<std::uint8_t>(r);
    }
    l.validate();
    return l;
}

void write_nifti_volume(const std::string& path, const Volume& v) {
    if (v.c != 1) throw ValidationError("write_nifti_volume: expected a single-channel volume");
    Nifti1Header hdr = make_header(v.d, v.h, v.w, v.spacing, DT_FLOAT32, 32);
    std::vector<float> payload(v.data.size());
    for (std::size_t i = 0; i < v.data.size(); ++i) payload[i] = static_cast<float>(v.data[i]);
    write_file(path, hdr, payload.data(), payload.size() * sizeof(float));
}

void write_nifti_labels(const std::string& path, const LabelVolume& l) {
    Nifti1Header hdr = make_header(l.d, l.h, l.w, l.spacing, DT_UINT8, 8);
    write_file(path, hdr, l.labels.data(), l.labels.size());
}

}  // namespace cmseg

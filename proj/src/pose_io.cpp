#include <algorithm>
#include <fstream>
#include <iterator>
#include <json.hpp>
#include <sstream>

#include "ucdg/data.hpp"
#include "ucdg/text.hpp"

namespace ucdg {

using json = nlohmann::json;

std::array<double, 3> Camera::to_camera(const std::array<double, 3>& p) const {
  const auto& R = rotation;
  return {R[0] * p[0] + R[1] * p[1] + R[2] * p[2] + translation[0],
          R[3] * p[0] + R[4] * p[1] + R[5] * p[2] + translation[1],
          R[6] * p[0] + R[7] * p[1] + R[8] * p[2] + translation[2]};
}

std::array<double, 2> Camera::project(const std::array<double, 3>& c) const {
  if (!(c[2] > 0.0)) throw std::domain_error("Camera::project: point is not in front of the camera");
  return {focal * c[0] / c[2] + cx, focal * c[1] / c[2] + cy};
}

DirectedSkeleton PoseSequence::skeleton() const {
  if (is_builtin_layout(layout)) return build_skeleton(layout);
  if (parents.empty()) throw SkeletonError("unknown skeleton layout '" + layout + "' and no parent array given");
  return build_skeleton(parents, {}, layout);
}

void PoseSequence::validate() const {
  if (!poses2d && !poses3d) throw std::invalid_argument("pose sequence holds neither 2D nor 3D poses");
  if (frames == 0) throw std::invalid_argument("pose sequence has no frames");
  if (!(fps > 0.0)) throw std::invalid_argument("pose sequence frame rate must be positive");
  const std::size_t J = skeleton().joint_count();
  if (poses2d) {
    if (poses2d->shape() != Shape{frames, J, 2}) {
      throw ShapeError("poses2d has shape " + shape_string(poses2d->shape()) + ", expected " +
                       shape_string({frames, J, 2}));
    }
    if (width == 0 || height == 0) throw std::invalid_argument("image width and height are required with 2D poses");
  }
  if (poses3d && poses3d->shape() != Shape{frames, J, 3}) {
    throw ShapeError("poses3d has shape " + shape_string(poses3d->shape()) + ", expected " +
                     shape_string({frames, J, 3}));
  }
}

std::string format_poses(const PoseSequence& seq) {
  seq.validate();
  json header = {{"format", "DGP"}, {"version", 1},          {"layout", seq.layout}, {"fps", seq.fps},
                 {"frames", seq.frames}, {"width", seq.width}, {"height", seq.height}};
  json fields = json::array();
  if (seq.poses2d) fields.push_back("pose2d");
  if (seq.poses3d) fields.push_back("pose3d");
  header["fields"] = fields;
  if (!seq.parents.empty()) header["parents"] = seq.parents;
  if (seq.camera) {
    header["camera"] = {{"focal", seq.camera->focal},
                        {"cx", seq.camera->cx},
                        {"cy", seq.camera->cy},
                        {"rotation", seq.camera->rotation},
                        {"translation", seq.camera->translation}};
  }
  if (!seq.action.empty()) header["action"] = seq.action;
  if (seq.noise_sigma != 0.0) header["noise_sigma"] = seq.noise_sigma;

  std::string out = header.dump() + '\n';
  const std::size_t n2 = seq.poses2d ? seq.poses2d->size() / seq.frames : 0;
  const std::size_t n3 = seq.poses3d ? seq.poses3d->size() / seq.frames : 0;
  for (std::size_t f = 0; f < seq.frames; ++f) {
    bool first = true;
    auto emit = [&](const Tensor& t, std::size_t n) {
      for (std::size_t i = 0; i < n; ++i) {
        if (!first) out += ' ';
        out += format_double(t[f * n + i]);
        first = false;
      }
    };
    if (seq.poses2d) emit(*seq.poses2d, n2);
    if (seq.poses3d) emit(*seq.poses3d, n3);
    out += '\n';
  }
  return out;
}

namespace {

template <typename T>
T header_field(const json& h, const char* key) {
  if (!h.contains(key)) throw FormatError(std::string("header is missing '") + key + "'", 1);
  try {
    return h.at(key).get<T>();
  } catch (const json::exception&) {
    throw FormatError(std::string("header field '") + key + "' has the wrong type", 1);
  }
}

}  // namespace

PoseSequence parse_poses(std::string_view text) {
  std::istringstream in{std::string(text)};
  std::string line;
  if (!std::getline(in, line)) throw FormatError("empty pose file", 1);
  json h;
  try {
    h = json::parse(line);
  } catch (const json::exception& e) {
    throw FormatError(std::string("header is not valid JSON: ") + e.what(), 1);
  }
  if (!h.is_object() || h.value("format", "") != "DGP") throw FormatError("not a DGP pose file", 1);
  const int version = header_field<int>(h, "version");
  if (version != 1) throw FormatError("unsupported DGP version " + std::to_string(version), 1);

  PoseSequence seq;
  seq.layout = header_field<std::string>(h, "layout");
  seq.fps = header_field<double>(h, "fps");
  seq.frames = header_field<std::size_t>(h, "frames");
  seq.width = header_field<std::size_t>(h, "width");
  seq.height = header_field<std::size_t>(h, "height");
  if (h.contains("parents")) seq.parents = header_field<std::vector<int>>(h, "parents");
  if (h.contains("action")) seq.action = header_field<std::string>(h, "action");
  if (h.contains("noise_sigma")) seq.noise_sigma = header_field<double>(h, "noise_sigma");
  if (h.contains("camera")) {
    const json& c = h["camera"];
    try {
      Camera cam;
      cam.focal = c.at("focal").get<double>();
      cam.cx = c.at("cx").get<double>();
      cam.cy = c.at("cy").get<double>();
      cam.rotation = c.at("rotation").get<std::array<double, 9>>();
      cam.translation = c.at("translation").get<std::array<double, 3>>();
      seq.camera = cam;
    } catch (const json::exception&) {
      throw FormatError("malformed camera in header", 1);
    }
  }
  bool has2d = false, has3d = false;
  for (const auto& f : header_field<std::vector<std::string>>(h, "fields")) {
    if (f == "pose2d") has2d = true;
    else if (f == "pose3d") has3d = true;
    else throw FormatError("unknown field '" + f + "'", 1);
  }
  if (!has2d && !has3d) throw FormatError("header lists no pose fields", 1);
  if (seq.frames == 0) throw FormatError("header declares zero frames", 1);

  std::size_t J = 0;
  try {
    J = seq.skeleton().joint_count();
  } catch (const SkeletonError& e) {
    throw FormatError(e.what(), 1);
  }
  const std::size_t n2 = has2d ? J * 2 : 0, n3 = has3d ? J * 3 : 0;
  std::vector<double> v2, v3;
  v2.reserve(seq.frames * n2);
  v3.reserve(seq.frames * n3);

  std::size_t line_no = 1, rows = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    if (rows == seq.frames) {
      throw FormatError("more rows than the " + std::to_string(seq.frames) + " declared frames", line_no);
    }
    std::istringstream row(line);
    std::string tok;
    std::size_t count = 0;
    while (row >> tok) {
      double v;
      try {
        v = parse_double(tok);
      } catch (const ParseError&) {
        throw FormatError("non-numeric token '" + tok + "'", line_no);
      }
      if (count < n2) v2.push_back(v);
      else if (count < n2 + n3) v3.push_back(v);
      ++count;
    }
    if (count != n2 + n3) {
      throw FormatError("expected " + std::to_string(n2 + n3) + " values, got " + std::to_string(count), line_no);
    }
    ++rows;
  }
  if (rows != seq.frames) {
    throw FormatError("file ends after " + std::to_string(rows) + " of " + std::to_string(seq.frames) + " frames",
                      line_no + 1);
  }
  if (has2d) seq.poses2d = Tensor({seq.frames, J, 2}, std::move(v2));
  if (has3d) seq.poses3d = Tensor({seq.frames, J, 3}, std::move(v3));
  try {
    seq.validate();
  } catch (const std::exception& e) {
    throw FormatError(e.what(), 1);
  }
  return seq;
}

void save_poses(const PoseSequence& seq, const std::filesystem::path& path) {
  const std::string text = format_poses(seq);
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

PoseSequence load_poses(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open pose file " + path.string());
  const std::string text{std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
  try {
    return parse_poses(text);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.line());
  }
}

std::vector<PoseSequence> load_pose_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) throw std::runtime_error(dir.string() + " is not a directory");
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".dgp") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.empty()) throw std::runtime_error("no .dgp files in " + dir.string());
  std::vector<PoseSequence> out;
  for (const auto& p : files) out.push_back(load_poses(p));
  return out;
}

Tensor normalize_2d(const Tensor& pixels, std::size_t width, std::size_t height) {
  if (pixels.rank() < 1 || pixels.shape().back() != 2) {
    throw ShapeError("normalize_2d: expected (..., 2), got " + shape_string(pixels.shape()));
  }
  if (width == 0 || height == 0) throw std::invalid_argument("normalize_2d: image size must be positive");
  Tensor out = pixels;
  auto d = out.data();
  for (std::size_t i = 0; i < d.size(); i += 2) {
    d[i] = 2.0 * d[i] / double(width) - 1.0;
    d[i + 1] = 2.0 * d[i + 1] / double(height) - 1.0;
  }
  return out;
}

Tensor normalize_2d(const PoseSequence& seq) {
  if (!seq.poses2d) throw std::invalid_argument("normalize_2d: sequence has no 2D poses");
  return normalize_2d(*seq.poses2d, seq.width, seq.height);
}

Tensor root_relative(const Tensor& poses, std::size_t root) {
  if (poses.rank() < 2) throw ShapeError("root_relative: expected (..., J, C), got " + shape_string(poses.shape()));
  const std::size_t C = poses.shape().back(), J = poses.dim(poses.rank() - 2);
  if (root >= J) throw std::out_of_range("root_relative: root joint out of range");
  Tensor out = poses;
  auto d = out.data();
  for (std::size_t f = 0; f < d.size(); f += J * C) {
    for (std::size_t c = 0; c < C; ++c) {
      const double r = d[f + root * C + c];
      for (std::size_t j = 0; j < J; ++j) d[f + j * C + c] -= r;
    }
  }
  return out;
}

}  // namespace ucdg

#include "core/dataset.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "core/error.hpp"

namespace pxs {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, path + ": cannot open");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    std::ostringstream os;
    os << path << ": at byte " << e.byte << ": invalid JSON (" << e.what() << ")";
    fail(ErrorKind::format, os.str());
  }
  return j;
}

double require_number(const json& j, const char* key, const std::string& path) {
  if (!j.contains(key) || !j[key].is_number())
    fail(ErrorKind::format, path + ": missing numeric field \"" + std::string(key) + "\"");
  return j[key].get<double>();
}

std::string resolve(const std::string& root, const std::string& rel) {
  fs::path p(rel);
  if (p.is_absolute()) return p.string();
  return (fs::path(root) / p).string();
}

View load_view(const json& entry, const std::string& root, int index, bool depth_required,
               const std::string& manifest_path, const char* kind) {
  auto str_field = [&](const char* key, bool required) -> std::string {
    if (!entry.contains(key)) {
      if (required) {
        std::ostringstream os;
        os << manifest_path << ": " << kind << " entry " << index << " is missing \"" << key
           << "\"";
        fail(ErrorKind::format, os.str());
      }
      return {};
    }
    if (!entry[key].is_string())
      fail(ErrorKind::format,
           manifest_path + ": field \"" + key + "\" must be a string");
    return entry[key].get<std::string>();
  };

  View v;
  v.image = read_png_rgb(resolve(root, str_field("image", true)));
  v.camera = load_camera_json(resolve(root, str_field("camera", true)), index);
  const std::string depth_file = str_field("depth", depth_required);
  if (!depth_file.empty()) v.depth = read_pfm(resolve(root, depth_file));

  if (v.camera.width != v.image.width || v.camera.height != v.image.height) {
    std::ostringstream os;
    os << manifest_path << ": " << kind << " entry " << index << ": camera size "
       << v.camera.width << "x" << v.camera.height << " does not match image "
       << v.image.width << "x" << v.image.height;
    fail(ErrorKind::invalid_argument, os.str());
  }
  if (v.depth.channels &&
      (v.depth.width != v.image.width || v.depth.height != v.image.height)) {
    std::ostringstream os;
    os << manifest_path << ": " << kind << " entry " << index
       << ": depth resolution does not match image";
    fail(ErrorKind::invalid_argument, os.str());
  }
  return v;
}

}  // namespace

Camera load_camera_json(const std::string& path, int view_index) {
  const json j = load_json_file(path);
  Camera cam;
  cam.fx = require_number(j, "fx", path);
  cam.fy = require_number(j, "fy", path);
  cam.cx = require_number(j, "cx", path);
  cam.cy = require_number(j, "cy", path);
  const double w = require_number(j, "width", path);
  const double h = require_number(j, "height", path);
  if (w < 1 || h < 1 || w != std::floor(w) || h != std::floor(h))
    fail(ErrorKind::format, path + ": width/height must be positive integers");
  cam.width = static_cast<std::size_t>(w);
  cam.height = static_cast<std::size_t>(h);
  if (!j.contains("world_to_cam") || !j["world_to_cam"].is_array() ||
      j["world_to_cam"].size() != 12)
    fail(ErrorKind::format, path + ": \"world_to_cam\" must be an array of 12 numbers");
  double m[12];
  for (int i = 0; i < 12; ++i) {
    const auto& e = j["world_to_cam"][i];
    if (!e.is_number()) fail(ErrorKind::format, path + ": \"world_to_cam\" must be numeric");
    m[i] = e.get<double>();
  }
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) cam.R(r, c) = m[r * 4 + c];
    cam.t(r) = m[r * 4 + 3];
  }
  cam.view_index = view_index;
  try {
    cam.validate();
  } catch (const Error& e) {
    fail(ErrorKind::format, path + ": " + e.what());
  }
  return cam;
}

void save_camera_json(const std::string& path, const Camera& cam) {
  json j;
  j["fx"] = cam.fx;
  j["fy"] = cam.fy;
  j["cx"] = cam.cx;
  j["cy"] = cam.cy;
  j["width"] = cam.width;
  j["height"] = cam.height;
  json m = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) m.push_back(cam.R(r, c));
    m.push_back(cam.t(r));
  }
  j["world_to_cam"] = m;
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::io, path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

Dataset load_dataset(const std::string& manifest_path) {
  const json j = load_json_file(manifest_path);
  Dataset ds;
  ds.root = fs::path(manifest_path).parent_path().string();
  if (ds.root.empty()) ds.root = ".";

  if (!j.contains("views") || !j["views"].is_array() || j["views"].empty())
    fail(ErrorKind::format, manifest_path + ": \"views\" must be a non-empty array");

  int idx = 0;
  for (const auto& entry : j["views"])
    ds.views.push_back(load_view(entry, ds.root, idx++, true, manifest_path, "view"));

  const std::size_t w = ds.views[0].image.width, h = ds.views[0].image.height;
  for (std::size_t n = 1; n < ds.views.size(); ++n)
    if (ds.views[n].image.width != w || ds.views[n].image.height != h)
      fail(ErrorKind::invalid_argument,
           manifest_path + ": all views must share one resolution");

  if (j.contains("flows")) {
    if (!j["flows"].is_array())
      fail(ErrorKind::format, manifest_path + ": \"flows\" must be an array");
    for (const auto& entry : j["flows"]) {
      FlowEdge e;
      if (!entry.contains("from") || !entry.contains("to") || !entry.contains("file"))
        fail(ErrorKind::format,
             manifest_path + ": each flow needs \"from\", \"to\", and \"file\"");
      e.from = entry["from"].get<int>();
      e.to = entry["to"].get<int>();
      const int n = static_cast<int>(ds.views.size());
      if (e.from < 0 || e.from >= n || e.to < 0 || e.to >= n || e.from == e.to) {
        std::ostringstream os;
        os << manifest_path << ": flow pair (" << e.from << "," << e.to
           << ") out of range for " << n << " views";
        fail(ErrorKind::invalid_argument, os.str());
      }
      e.flow = read_flo(resolve(ds.root, entry["file"].get<std::string>()));
      if (e.flow.width != w || e.flow.height != h)
        fail(ErrorKind::invalid_argument,
             manifest_path + ": flow resolution does not match the views");
      ds.flows.push_back(std::move(e));
    }
  }

  if (j.contains("heldout")) {
    if (!j["heldout"].is_array())
      fail(ErrorKind::format, manifest_path + ": \"heldout\" must be an array");
    int hidx = 0;
    for (const auto& entry : j["heldout"]) {
      View v = load_view(entry, ds.root, hidx++, false, manifest_path, "heldout");
      if (v.image.width != w || v.image.height != h)
        fail(ErrorKind::invalid_argument,
             manifest_path + ": held-out resolution does not match the views");
      ds.heldout.push_back(std::move(v));
    }
  }

  ds.output_dir = resolve(ds.root, j.value("output", std::string("out")));
  return ds;
}

}  // namespace pxs

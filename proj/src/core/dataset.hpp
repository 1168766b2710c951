#pragma once

#include <string>
#include <vector>

#include "core/geometry.hpp"
#include "core/image_io.hpp"

namespace pxs {

struct View {
  ImageF image;  // 3xHxW in [0,1]
  ImageF depth;  // 1xHxW scene units; may be empty (channels==0) for held-out views
  Camera camera;
};

struct FlowEdge {
  int from = 0, to = 0;
  ImageF flow;  // 2xHxW pixel displacements, defined on the "from" view's grid
};

struct Dataset {
  std::vector<View> views;
  std::vector<FlowEdge> flows;
  std::vector<View> heldout;
  std::string root;        // directory containing the manifest
  std::string output_dir;  // manifest "output", resolved against root
};

// Camera JSON: {fx,fy,cx,cy,width,height,world_to_cam:[12 row-major floats]}.
Camera load_camera_json(const std::string& path, int view_index);
void save_camera_json(const std::string& path, const Camera& cam);

// Loads and fully validates a dataset: every referenced file parses, all
// views share one resolution, depth/flow shapes match, cameras are proper.
Dataset load_dataset(const std::string& manifest_path);

}  // namespace pxs

#include "core/bundle.hpp"

#include <string>

#include "core/error.hpp"

namespace pxs {

void SceneBundle::validate() const {
  check(!grids.empty(), ErrorKind::state, "scene bundle holds no views");
  check(segs.size() == grids.size(), ErrorKind::state,
        "scene bundle: one region mask per view required");
  check(channels >= 1, ErrorKind::state, "scene bundle: channel count must be >= 1");
  check(alpha_init > 0.0 && alpha_init < 1.0, ErrorKind::state,
        "scene bundle: alpha_init outside (0,1)");
  for (std::size_t v = 0; v < grids.size(); ++v) {
    const auto& g = grids[v];
    const auto& s = segs[v];
    check(s.channels == channels && s.height == g.height && s.width == g.width, ErrorKind::state,
          "scene bundle: region mask shape mismatch on view " + std::to_string(v));
    s.validate();
  }
  for (const Decoder* d : {&depth_decoder, &opacity_decoder}) {
    check(d->out_channels == channels, ErrorKind::state,
          "scene bundle: decoder channel count mismatch");
    check(d->height == grids[0].height && d->width == grids[0].width, ErrorKind::state,
          "scene bundle: decoder resolution mismatch");
  }
  if (!align.scale.empty()) {
    check(align.scale.size() == grids.size() && align.offset.size() == grids.size(),
          ErrorKind::state, "scene bundle: alignment parameter count mismatch");
  }
}

double view_coordinate(std::size_t view, std::size_t n_views) {
  check(n_views > 0 && view < n_views, ErrorKind::invalid_argument,
        "view_coordinate: view index out of range");
  if (n_views == 1) return 0.0;
  return static_cast<double>(view) / static_cast<double>(n_views - 1);
}

CloudSlice materialize_view(const SceneBundle& bundle, std::size_t view, ad::Tensor* depth_out) {
  check(view < bundle.view_count(), ErrorKind::invalid_argument,
        "materialize_view: view index out of range");
  const PixelGaussianGrid& grid = bundle.grids[view];
  const SegMask& seg = bundle.segs[view];
  const double n = view_coordinate(view, bundle.view_count());
  const ad::Tensor rd_all = decode(bundle.depth_decoder, n);
  const ad::Tensor ro_all = decode(bundle.opacity_decoder, n);
  const ad::Tensor rd = apply_mask(rd_all, seg.data, bundle.channels, grid.height, grid.width);
  const ad::Tensor ro = apply_mask(ro_all, seg.data, bundle.channels, grid.height, grid.width);
  return materialize(grid, rd, ro, depth_out);
}

GaussianCloud assemble_cloud(const SceneBundle& bundle, std::vector<ad::Tensor>* depths_out) {
  bundle.validate();
  std::vector<CloudSlice> slices;
  std::vector<const PixelGaussianGrid*> grids;
  slices.reserve(bundle.view_count());
  grids.reserve(bundle.view_count());
  if (depths_out) depths_out->assign(bundle.view_count(), ad::Tensor{});
  for (std::size_t v = 0; v < bundle.view_count(); ++v) {
    slices.push_back(materialize_view(bundle, v, depths_out ? &(*depths_out)[v] : nullptr));
    grids.push_back(&bundle.grids[v]);
  }
  return concat_slices(slices, grids);
}

}  // namespace pxs

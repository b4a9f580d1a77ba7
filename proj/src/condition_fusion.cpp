#include "subswap/condition_fusion.hpp"

namespace subswap {

TokenLayout::TokenLayout(Index frames_with_ref, Index lh, Index lw, Index patch_edge)
    : frames(frames_with_ref), latent_h(lh), latent_w(lw), patch(patch_edge) {
  require(frames >= 1, ErrorCode::kShape, "layout needs the reference frame");
  require(patch >= 1 && lh % patch == 0 && lw % patch == 0, ErrorCode::kShape,
          "latent spatial dims must be divisible by the patch edge");
}

AttentionMask build_attention_mask(const TokenLayout& layout) {
  const Index n = layout.total_tokens(), r = layout.ref_tokens();
  AttentionMask m = AttentionMask::Constant(n, n, true);
  m.topRightCorner(r, n - r).setConstant(false);
  return m;
}

AttentionMask full_attention_mask(const TokenLayout& layout) {
  const Index n = layout.total_tokens();
  return AttentionMask::Constant(n, n, true);
}

KvPartition kv_partition(const TokenLayout& layout) {
  KvPartition p;
  for (Index i = 0; i < layout.total_tokens(); ++i)
    (i < layout.ref_tokens() ? p.reference : p.video).push_back(i);
  return p;
}

}  // namespace subswap

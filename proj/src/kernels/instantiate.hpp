#pragma once

// Explicit instantiation list shared by the serial and parallel kernel sets.

#define STYLEADV_INSTANTIATE(T)                                                                 \
  template void gemm<T>(bool, bool, Index, Index, Index, T, const T*, const T*, T, T*);         \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);        \
  template void conv2d_backward_data<T>(const ConvGeometry&, const T*, const T*, T*);            \
  template void conv2d_backward_params<T>(const ConvGeometry&, const T*, const T*, T*, T*);      \
  template void batchnorm_forward_train<T>(Index, Index, Index, const T*, const T*, const T*, T, \
                                           T*, T*, T*, T*);                                      \
  template void batchnorm_backward_train<T>(Index, Index, Index, const T*, const T*, const T*,   \
                                            const T*, T, T*, T*, T*);                            \
  template void channel_affine<T>(Index, Index, Index, const T*, const T*, const T*, T*);        \
  template void relu_forward<T>(Index, const T*, T*);                                            \
  template void relu_backward<T>(Index, const T*, const T*, T*);                                 \
  template void maxpool_forward<T>(const PoolGeometry&, const T*, T*, Index*);                   \
  template void maxpool_backward<T>(const PoolGeometry&, const T*, const Index*, T*);            \
  template void avgpool_forward<T>(const PoolGeometry&, const T*, T*);                           \
  template void avgpool_backward<T>(const PoolGeometry&, const T*, T*);                          \
  template void channel_moments<T>(Index, Index, const T*, T, T*, T*);                           \
  template void channel_moments_backward<T>(Index, Index, const T*, const T*, const T*, T,       \
                                            const T*, const T*, T*);

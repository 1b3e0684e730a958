//! Index helpers for row-major lattices where axis 0 varies fastest.

/// Strides for a lattice with `shape[d]` points along axis `d`.
pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut out = Vec::with_capacity(shape.len());
    let mut acc = 1;
    for &s in shape {
        out.push(acc);
        acc *= s;
    }
    out
}

/// Applies `f` to every one-dimensional line of `data` along `axis`.
///
/// The line is gathered into a contiguous buffer, handed to `f` and scattered back.
pub(crate) fn for_each_line(
    shape: &[usize],
    axis: usize,
    data: &mut [f64],
    mut f: impl FnMut(&mut [f64]),
) {
    let st = strides(shape);
    let len = shape[axis];
    let stride = st[axis];
    let total: usize = shape.iter().product();
    debug_assert_eq!(total, data.len());
    let mut buf = vec![0.0; len];
    for base in line_starts(shape, axis, total) {
        for (i, b) in buf.iter_mut().enumerate() {
            *b = data[base + i * stride];
        }
        f(&mut buf);
        for (i, b) in buf.iter().enumerate() {
            data[base + i * stride] = *b;
        }
    }
}

/// Applies a line-to-line map `f(input, output)` along `axis`, producing a lattice whose
/// extent along `axis` is `out_len`.
pub(crate) fn map_lines(
    shape: &[usize],
    axis: usize,
    data: &[f64],
    out_len: usize,
    mut f: impl FnMut(&[f64], &mut [f64]),
) -> Vec<f64> {
    let st = strides(shape);
    let len = shape[axis];
    let stride = st[axis];
    let total: usize = shape.iter().product();
    let mut out_shape = shape.to_vec();
    out_shape[axis] = out_len;
    let out_st = strides(&out_shape);
    let out_total: usize = out_shape.iter().product();
    let mut out = vec![0.0; out_total];
    let mut inbuf = vec![0.0; len];
    let mut outbuf = vec![0.0; out_len];
    for base in line_starts(shape, axis, total) {
        for (i, b) in inbuf.iter_mut().enumerate() {
            *b = data[base + i * stride];
        }
        outbuf.iter_mut().for_each(|b| *b = 0.0);
        f(&inbuf, &mut outbuf);
        // Same multi-index off the line axis, re-linearised for the output shape.
        let mut rem = base;
        let mut out_base = 0;
        for d in (0..shape.len()).rev() {
            let idx = rem / st[d];
            rem %= st[d];
            if d != axis {
                out_base += idx * out_st[d];
            }
        }
        for (i, b) in outbuf.iter().enumerate() {
            out[out_base + i * out_st[axis]] = *b;
        }
    }
    out
}

fn line_starts(shape: &[usize], axis: usize, total: usize) -> impl Iterator<Item = usize> + '_ {
    let st = strides(shape);
    let stride = st[axis];
    let len = shape[axis];
    (0..total).filter(move |&i| (i / stride).is_multiple_of(len))
}

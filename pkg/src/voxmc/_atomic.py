"""Lock-free primitives for nogil numba kernels.

``atomic_add_f64`` is a compare-and-swap loop over the 64-bit pattern of a
double, the usual substitute on platforms without a native floating-point
atomic add. ``atomic_dec_if_positive`` backs the workgroup photon counter.
Both operate on 1-D contiguous arrays.
"""
from llvmlite import ir
from numba import njit, types
from numba.core import cgutils
from numba.extending import intrinsic


def _element_pointer(context, builder, aryty, arr, idx):
    ary = context.make_array(aryty)(context, builder, arr)
    return cgutils.get_item_pointer(context, builder, aryty, ary, [idx])


@intrinsic
def atomic_add_f64(typingctx, arr, idx, val):
    """``arr[idx] += val`` atomically; returns the previous value."""
    if not (isinstance(arr, types.Array) and arr.dtype == types.float64 and arr.ndim == 1):
        return None
    sig = types.float64(arr, idx, types.float64)

    def codegen(context, builder, signature, args):
        arrv, idxv, valv = args
        valv = context.cast(builder, valv, signature.args[2], types.float64)
        ptr = _element_pointer(context, builder, signature.args[0], arrv, idxv)
        i64 = ir.IntType(64)
        iptr = builder.bitcast(ptr, i64.as_pointer())
        entry = builder.basic_block
        loop = builder.append_basic_block("cas.loop")
        done = builder.append_basic_block("cas.done")
        init = builder.load_atomic(iptr, "monotonic", 8)
        builder.branch(loop)
        builder.position_at_end(loop)
        old = builder.phi(i64)
        old.add_incoming(init, entry)
        oldf = builder.bitcast(old, ir.DoubleType())
        newi = builder.bitcast(builder.fadd(oldf, valv), i64)
        res = builder.cmpxchg(iptr, old, newi, "acq_rel", "monotonic")
        old.add_incoming(builder.extract_value(res, 0), builder.basic_block)
        builder.cbranch(builder.extract_value(res, 1), done, loop)
        builder.position_at_end(done)
        return oldf

    return sig, codegen


@intrinsic
def atomic_dec_if_positive(typingctx, arr, idx):
    """Decrement ``arr[idx]`` if it is > 0. Returns the value seen before.

    A return value <= 0 means nothing was taken.
    """
    if not (isinstance(arr, types.Array) and arr.dtype == types.int64 and arr.ndim == 1):
        return None
    sig = types.int64(arr, idx)

    def codegen(context, builder, signature, args):
        arrv, idxv = args
        ptr = _element_pointer(context, builder, signature.args[0], arrv, idxv)
        i64 = ir.IntType(64)
        zero = ir.Constant(i64, 0)
        one = ir.Constant(i64, 1)
        entry = builder.basic_block
        loop = builder.append_basic_block("dec.loop")
        try_ = builder.append_basic_block("dec.try")
        done = builder.append_basic_block("dec.done")
        init = builder.load_atomic(ptr, "monotonic", 8)
        builder.branch(loop)

        builder.position_at_end(loop)
        old = builder.phi(i64)
        old.add_incoming(init, entry)
        builder.cbranch(builder.icmp_signed(">", old, zero), try_, done)

        builder.position_at_end(try_)
        res = builder.cmpxchg(ptr, old, builder.sub(old, one), "acq_rel", "monotonic")
        seen = builder.extract_value(res, 0)
        old.add_incoming(seen, try_)
        builder.cbranch(builder.extract_value(res, 1), done, loop)

        builder.position_at_end(done)
        out = builder.phi(i64)
        out.add_incoming(old, loop)
        out.add_incoming(old, try_)
        return out

    return sig, codegen


@njit(nogil=True)
def add_f64(arr, idx, val):
    return atomic_add_f64(arr, idx, val)


@njit(nogil=True)
def dec_if_positive(arr, idx):
    return atomic_dec_if_positive(arr, idx)

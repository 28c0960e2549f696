"""A guided tour of the reverse-mode tape.

Walks through the pieces the training loop is built from: building
tensors, running ops forward, pulling gradients back, accumulating them
across backward calls, and switching the tape off for inference.
"""

import numpy as np

import egmae.autodiff as ad


def section(title):
    print(f"\n--- {title} ---")


def main():
    section("forward and backward through a small chain")
    x = ad.Tensor(np.array([[0.5, -1.0], [2.0, 0.0]]), requires_grad=True)
    w = ad.Tensor(np.array([[1.0, -0.5], [0.25, 0.75]]), requires_grad=True)
    b = ad.Tensor(np.zeros(2), requires_grad=True)
    out = ad.gelu(ad.linear(x, w, b))
    loss = ad.mse_loss(out, ad.Tensor(np.ones((2, 2))))
    print(f"loss = {loss.item():.6f}")
    loss.backward()
    print(f"dloss/dx =\n{x.grad}")
    print(f"dloss/dw =\n{w.grad}")

    section("gradients agree with central differences")
    h = 1e-6
    probe = np.zeros_like(x.data)
    probe[0, 0] = h
    with ad.no_grad():
        up = ad.mse_loss(ad.gelu(ad.linear(ad.Tensor(x.data + probe), w, b)), ad.Tensor(np.ones((2, 2))))
        down = ad.mse_loss(ad.gelu(ad.linear(ad.Tensor(x.data - probe), w, b)), ad.Tensor(np.ones((2, 2))))
    numeric = (up.item() - down.item()) / (2 * h)
    print(f"numeric dloss/dx[0,0] = {numeric:.8f}, tape said {x.grad[0, 0]:.8f}")

    section("gradients accumulate until cleared")
    v = ad.Tensor(np.array(3.0), requires_grad=True)
    ad.mul(v, v).backward()
    print(f"after one backward: {v.grad}  (d(v^2)/dv = 2v = 6)")
    ad.mul(v, v).backward()
    print(f"after a second:     {v.grad}  (sums, caller resets)")
    v.grad = None

    section("no_grad skips the tape entirely")
    with ad.no_grad():
        silent = ad.mul(v, v)
    print(f"value still computed: {silent.item()}, grad_fn recorded: {silent.requires_grad}")

    section("a consumed tape refuses a second backward")
    y = ad.Tensor(np.array(2.0), requires_grad=True)
    z = ad.mul(y, y)
    z.backward()
    try:
        z.backward()
    except ad.TapeError as err:
        print(f"TapeError as expected: {err}")


if __name__ == "__main__":
    main()

(function () {
  "use strict";

  var root = document.getElementById("cahicha");
  var statusEl = document.getElementById("status");
  var startBtn = document.getElementById("start");
  var retryBtn = document.getElementById("retry");
  var redirectTo = root.getAttribute("data-redirect-to") || "/";
  var busy = false;
  var retriedStale = false;

  function b64urlToBytes(text) {
    var b64 = text.replace(/-/g, "+").replace(/_/g, "/");
    while (b64.length % 4) b64 += "=";
    var bin = atob(b64);
    var out = new Uint8Array(bin.length);
    for (var i = 0; i < bin.length; i++) out[i] = bin.charCodeAt(i);
    return out;
  }

  function bytesToB64url(buf) {
    var bytes = new Uint8Array(buf);
    var bin = "";
    for (var i = 0; i < bytes.length; i++) bin += String.fromCharCode(bytes[i]);
    return btoa(bin).replace(/\+/g, "-").replace(/\//g, "_").replace(/=+$/, "");
  }

  function setStatus(text, failed) {
    statusEl.textContent = text;
    if (failed) statusEl.setAttribute("data-failed", "");
    else statusEl.removeAttribute("data-failed");
  }

  function fail(text) {
    busy = false;
    setStatus(text, true);
    startBtn.hidden = true;
    retryBtn.hidden = false;
    retryBtn.focus();
  }

  function fetchOptions() {
    return fetch("/__cahicha/challenge", { cache: "no-store", credentials: "same-origin" }).then(function (res) {
      if (!res.ok) throw new Error("Could not get a challenge (HTTP " + res.status + ").");
      return res.json();
    });
  }

  function toCreateOptions(pk) {
    var opts = Object.assign({}, pk);
    opts.challenge = b64urlToBytes(pk.challenge);
    opts.user = Object.assign({}, pk.user, { id: b64urlToBytes(pk.user.id) });
    return opts;
  }

  function submit(recordId, credential) {
    var body = {
      record_id: recordId,
      attestation_object_b64: bytesToB64url(credential.response.attestationObject),
      client_data_b64: bytesToB64url(credential.response.clientDataJSON),
      redirect_to: redirectTo
    };
    return fetch("/__cahicha/verify", {
      method: "POST",
      credentials: "same-origin",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(body)
    });
  }

  function run() {
    if (busy) return;
    busy = true;
    retryBtn.hidden = true;
    startBtn.hidden = true;
    setStatus("Loading…");
    fetchOptions()
      .then(function (challenge) {
        setStatus("Waiting for your security key or device prompt…");
        return navigator.credentials
          .create({ publicKey: toCreateOptions(challenge.publicKey) })
          .then(function (credential) {
            setStatus("Checking…");
            return submit(challenge.record_id, credential);
          });
      })
      .then(function (res) {
        if (res.ok && res.redirected) {
          setStatus("Verified. Redirecting…");
          window.location.replace(res.url);
          return;
        }
        if (res.ok) {
          window.location.replace(redirectTo);
          return;
        }
        return res.json().catch(function () { return {}; }).then(function (body) {
          var reason = body.error || "HTTP " + res.status;
          if (reason === "ChallengeExpired" && !retriedStale) {
            retriedStale = true;
            busy = false;
            run();
            return;
          }
          fail("Verification failed: " + reason + ".");
        });
      })
      .catch(function (err) {
        if (err && err.name === "NotAllowedError") fail("The prompt was dismissed or timed out.");
        else fail(err && err.message ? err.message : "Something went wrong.");
      });
  }

  if (!window.PublicKeyCredential || !navigator.credentials || !navigator.credentials.create) {
    fail("This browser does not support security keys or passkeys. Try a current version of Chrome, Edge, Firefox or Safari.");
    retryBtn.hidden = true;
    return;
  }
  retryBtn.addEventListener("click", function () { retriedStale = false; run(); });
  startBtn.addEventListener("click", run);
  setStatus("Ready.");
  startBtn.hidden = false;
  startBtn.focus();
})();
